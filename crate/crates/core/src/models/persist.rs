//! Model files: a two-line text header followed by a JSON body.
//!
//! ```text
//! airshadow-model v1
//! family random_forest
//! {"family":"random_forest", ...}
//! ```
//!
//! Numbers in the body use the shortest representation that parses back to
//! the same `f64`, so a loaded model predicts bit-identically.

use std::io::{Read, Write};

use super::{ClassifierError, TrainedModel};

pub const MODEL_MAGIC: &str = "airshadow-model";
pub const MODEL_VERSION: u32 = 1;

pub fn save_model<W: Write>(model: &TrainedModel, mut sink: W) -> Result<(), ClassifierError> {
    writeln!(sink, "{MODEL_MAGIC} v{MODEL_VERSION}")?;
    writeln!(sink, "family {}", model.family)?;
    let body = serde_json::to_string(model).map_err(|e| ClassifierError::CorruptModel(e.to_string()))?;
    sink.write_all(body.as_bytes())?;
    sink.write_all(b"\n")?;
    sink.flush()?;
    Ok(())
}

pub fn load_model<R: Read>(mut source: R) -> Result<TrainedModel, ClassifierError> {
    let corrupt = |m: String| ClassifierError::CorruptModel(m);
    let mut text = String::new();
    source
        .read_to_string(&mut text)
        .map_err(|e| corrupt(format!("unreadable: {e}")))?;
    let mut lines = text.splitn(3, '\n');
    let header = lines.next().unwrap_or_default().trim_end();
    let version = header
        .strip_prefix(MODEL_MAGIC)
        .and_then(|rest| rest.strip_prefix(" v"))
        .ok_or_else(|| corrupt(format!("missing `{MODEL_MAGIC}` header")))?;
    match version.parse::<u32>() {
        Ok(MODEL_VERSION) => {}
        Ok(_) => return Err(ClassifierError::VersionMismatch(version.to_string())),
        Err(_) => return Err(corrupt(format!("bad version `{version}`"))),
    }
    let family = lines
        .next()
        .and_then(|l| l.trim_end().strip_prefix("family "))
        .ok_or_else(|| corrupt("missing family line".into()))?;
    let body = lines.next().ok_or_else(|| corrupt("missing model body".into()))?;
    let model: TrainedModel = serde_json::from_str(body).map_err(|e| corrupt(e.to_string()))?;
    if model.family.as_str() != family {
        return Err(corrupt(format!(
            "family line says `{family}` but body holds `{}`",
            model.family
        )));
    }
    if model.classes.is_empty() {
        return Err(corrupt("empty class list".into()));
    }
    Ok(model)
}
