//! On-disk layout of a fitted model: a `model.json` descriptor next to one
//! DSUC codebook per K-means level or a single DSUN codec checkpoint.

use std::path::Path;

use serde::{Deserialize, Serialize};
use tonequant_core::codec::NeuralCodec;
use tonequant_core::experiment::{FittedModel, Provenance, Representation};
use tonequant_core::kmeans::Codebook;

use crate::{CliError, CliResult};

pub const DESCRIPTOR: &str = "model.json";
const CODEC_FILE: &str = "codec.dsun";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDescriptor {
    pub representation: Representation,
    pub files: Vec<String>,
    pub provenance: Provenance,
}

pub fn save(dir: &Path, rep: &Representation, model: &FittedModel, provenance: &Provenance) -> CliResult<ModelDescriptor> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let files = match model {
        FittedModel::Latent => {
            return Err(CliError::Usage("the continuous baseline has nothing to fit".into()));
        }
        FittedModel::KMeans { quantiser, .. } => {
            let mut files = Vec::new();
            for (i, cb) in quantiser.codebooks().into_iter().enumerate() {
                let name = format!("level{}.dsuc", i + 1);
                cb.save(&dir.join(&name))?;
                files.push(name);
            }
            files
        }
        FittedModel::Codec(codec) => {
            codec.save(&dir.join(CODEC_FILE))?;
            vec![CODEC_FILE.to_string()]
        }
    };
    let descriptor = ModelDescriptor {
        representation: rep.clone(),
        files,
        provenance: provenance.clone(),
    };
    let path = dir.join(DESCRIPTOR);
    let text = serde_json::to_string_pretty(&descriptor).map_err(tonequant_core::Error::from)? + "\n";
    std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    Ok(descriptor)
}

pub fn load(dir: &Path) -> CliResult<(ModelDescriptor, FittedModel)> {
    let path = dir.join(DESCRIPTOR);
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let descriptor: ModelDescriptor = serde_json::from_str(&text).map_err(tonequant_core::Error::from)?;
    let model = match &descriptor.representation {
        Representation::Latent => {
            return Err(CliError::Usage(format!("{}: a latent model has no files", path.display())));
        }
        Representation::KMeans(kind) => {
            let codebooks = descriptor
                .files
                .iter()
                .map(|f| Codebook::load(&dir.join(f)))
                .collect::<Result<Vec<_>, _>>()?;
            FittedModel::KMeans {
                kind: *kind,
                quantiser: kind.from_codebooks(codebooks)?,
            }
        }
        Representation::Codec(levels) => {
            let file = descriptor.files.first().map_or(CODEC_FILE, String::as_str);
            let codec = NeuralCodec::load(&dir.join(file))?;
            if &codec.config.codes_per_level != levels {
                return Err(CliError::Usage(format!(
                    "{}: checkpoint has levels {:?}, descriptor says {levels:?}",
                    dir.display(),
                    codec.config.codes_per_level
                )));
            }
            FittedModel::Codec(codec)
        }
    };
    Ok((descriptor, model))
}
