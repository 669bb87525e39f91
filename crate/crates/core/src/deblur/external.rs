use std::process::Command;

use crate::error::{Error, Result};
use crate::imagekit::{ensure_same_dims, read_image, write_image, Image};
use crate::scalar::Real;

/// Runs an external deblurrer over PNG files.
///
/// `template` is split like a shell command line; `{in}`, `{out}` and
/// `{prior}` are replaced by paths in a private temporary directory. The
/// program is launched directly, without a shell.
pub fn apply_external<T: Real>(img: &Image<T>, prior: Option<&Image<T>>, template: &str) -> Result<Image<T>> {
    if !template.contains("{in}") || !template.contains("{out}") {
        return Err(Error::InvalidParameter("external command needs {in} and {out} placeholders".into()));
    }
    if template.contains("{prior}") && prior.is_none() {
        return Err(Error::InvalidParameter("external command uses {prior} but no prior was given".into()));
    }
    let words =
        shlex::split(template).ok_or_else(|| Error::InvalidParameter(format!("cannot parse command `{template}`")))?;
    let (program, args) = words
        .split_first()
        .ok_or_else(|| Error::InvalidParameter("external command is empty".into()))?;

    let dir = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
    let input = dir.path().join("in.png");
    let output = dir.path().join("out.png");
    let prior_path = dir.path().join("prior.png");
    write_image(&input, img)?;
    if let Some(p) = prior {
        ensure_same_dims(p, img)?;
        write_image(&prior_path, p)?;
    }
    let fill = |w: &str| {
        w.replace("{in}", &input.to_string_lossy())
            .replace("{out}", &output.to_string_lossy())
            .replace("{prior}", &prior_path.to_string_lossy())
    };
    let status = Command::new(fill(program))
        .args(args.iter().map(|a| fill(a)))
        .status()
        .map_err(|source| Error::ExternalLaunch { program: program.clone(), source })?;
    if !status.success() {
        return Err(Error::ExternalStatus { status: status.code() });
    }
    if !output.exists() {
        return Err(Error::ExternalMissingOutput(output));
    }
    let out: Image<T> = read_image(&output)?;
    ensure_same_dims(&out, img)?;
    Ok(out)
}
