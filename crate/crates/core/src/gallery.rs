//! Folder of labelled paintings named `<class>_<index>.ppm`.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::cgan::Painting;
use crate::imaging::{read_ppm, save_ppm, ImageError, ImageRGB};
use crate::label::EmotionLabel;

#[derive(Debug, Error)]
pub enum GalleryError {
    #[error("{0}: painting file names must look like <class>_<index>.ppm")]
    BadName(PathBuf),
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: ImageError,
    },
    #[error("no paintings found in {0}")]
    Empty(PathBuf),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn painting_file_name(label: EmotionLabel, index: usize) -> String {
    format!("{}_{index:04}.ppm", label.name())
}

/// Parses `<class>_<index>` from a file stem.
pub fn parse_painting_name(path: &Path) -> Option<(EmotionLabel, usize)> {
    let stem = path.file_stem()?.to_str()?;
    let (class, index) = stem.rsplit_once('_')?;
    Some((class.parse().ok()?, index.parse().ok()?))
}

pub fn save_painting(dir: impl AsRef<Path>, label: EmotionLabel, index: usize, image: &ImageRGB) -> Result<PathBuf, GalleryError> {
    let path = dir.as_ref().join(painting_file_name(label, index));
    save_ppm(image, &path).map_err(|source| GalleryError::Image { path: path.clone(), source })?;
    Ok(path)
}

/// Loads every `.ppm` file, ordered by index then class code. Other files are
/// ignored.
pub fn load_painting_folder(dir: impl AsRef<Path>) -> Result<Vec<Painting>, GalleryError> {
    let dir = dir.as_ref();
    let mut entries = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("ppm") {
            continue;
        }
        let (label, index) = parse_painting_name(&path).ok_or_else(|| GalleryError::BadName(path.clone()))?;
        entries.push((index, label.code(), label, path));
    }
    if entries.is_empty() {
        return Err(GalleryError::Empty(dir.to_path_buf()));
    }
    entries.sort_by(|a, b| (a.0, a.1, &a.3).cmp(&(b.0, b.1, &b.3)));
    entries
        .into_iter()
        .map(|(_, _, label, path)| {
            let image = read_ppm(&path).map_err(|source| GalleryError::Image { path, source })?;
            Ok(Painting { label, image })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        let name = painting_file_name(EmotionLabel::Sadness, 7);
        assert_eq!(name, "sadness_0007.ppm");
        assert_eq!(parse_painting_name(Path::new(&name)), Some((EmotionLabel::Sadness, 7)));
        assert_eq!(parse_painting_name(Path::new("joy_1.ppm")), None);
        assert_eq!(parse_painting_name(Path::new("anger.ppm")), None);
    }
}
