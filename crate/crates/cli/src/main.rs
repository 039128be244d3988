use tonequant_cli::CliError;

fn main() {
    if let Err(e) = tonequant_cli::run(std::env::args_os()) {
        match &e {
            CliError::Usage(msg) => eprintln!("{}", msg.trim_end()),
            other => eprintln!("error: {other}"),
        }
        std::process::exit(e.exit_code());
    }
}
