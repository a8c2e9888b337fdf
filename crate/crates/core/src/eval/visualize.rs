//! Prediction panels: input, boundary overlay, map overlay and a probability bar.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::face::Image;
use crate::model::{images_to_tensor, tensor_to_field, Mfrn, Mode};

/// Gap between and around the three tiles, in pixels.
pub const MARGIN: usize = 8;

#[derive(Clone, Debug)]
pub struct Prediction {
    pub p_fake: f64,
    pub edge: Array2<f32>,
    pub map: Array2<f32>,
}

/// Eval-mode predictions for a list of images.
pub fn predict(model: &Mfrn, images: &[&Image], batch: usize) -> Result<Vec<Prediction>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(batch.max(1)) {
        let x = images_to_tensor(chunk, model.dtype())?;
        let o = model.forward(&x, Mode::Eval)?;
        let p: Vec<f64> = o.p_fake.to_dtype(candle_core::DType::F64)?.to_vec1()?;
        for (i, &p_fake) in p.iter().enumerate() {
            out.push(Prediction {
                p_fake,
                edge: tensor_to_field(&o.edge, i)?,
                map: tensor_to_field(&o.map, i)?,
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PanelInfo {
    pub id: String,
    pub file: String,
    pub p_fake: f64,
    pub mean_edge: f64,
    pub mean_map: f64,
}

/// Panel size for `size x size` inputs: `(width, height)`.
pub fn panel_dims(size: usize) -> (usize, usize) {
    (3 * size + 4 * MARGIN, size + 3 * MARGIN)
}

pub fn file_name_for(id: &str) -> String {
    let safe: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect();
    format!("{safe}.png")
}

fn heat(p: f32) -> [f32; 3] {
    let p = p.clamp(0.0, 1.0);
    [(2.0 * p).min(1.0), (2.0 * p - 1.0).max(0.0), 0.0]
}

/// Lays out one panel. The heat fields may be at half resolution.
pub fn render_panel(input: &Image, pred: &Prediction) -> Image {
    let (s, _, _) = input.dim();
    let (w, h) = panel_dims(s);
    let mut panel = Image::ones((h, w, 3));
    let field_at = |f: &Array2<f32>, y: usize, x: usize| {
        let (fh, fw) = f.dim();
        f[[(y * fh / s).min(fh - 1), (x * fw / s).min(fw - 1)]]
    };
    for y in 0..s {
        for x in 0..s {
            for c in 0..3 {
                let v = input[[y, x, c]];
                panel[[MARGIN + y, MARGIN + x, c]] = v;
                let e = heat(field_at(&pred.edge, y, x))[c];
                panel[[MARGIN + y, 2 * MARGIN + s + x, c]] = 0.5 * v + 0.5 * e;
                let m = heat(field_at(&pred.map, y, x))[c];
                panel[[MARGIN + y, 3 * MARGIN + 2 * s + x, c]] = 0.5 * v + 0.5 * m;
            }
        }
    }
    // Probability bar in the bottom band: its length is P(fake).
    let span = w - 2 * MARGIN;
    let filled = (pred.p_fake.clamp(0.0, 1.0) * span as f64).round() as usize;
    for y in (s + MARGIN + MARGIN / 4)..(s + 2 * MARGIN + MARGIN / 4).min(h) {
        for x in 0..span {
            let color = if x < filled { [0.85, 0.15, 0.1] } else { [0.85, 0.85, 0.85] };
            for c in 0..3 {
                panel[[y, MARGIN + x, c]] = color[c];
            }
        }
    }
    panel
}

/// Writes one panel per sample, named by sample id, plus `captions.json`.
pub fn visualize(model: &Mfrn, samples: &[(String, Image)], out_dir: &Path) -> Result<Vec<PanelInfo>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let images: Vec<&Image> = samples.iter().map(|(_, i)| i).collect();
    let preds = predict(model, &images, 8)?;
    let mut infos = Vec::with_capacity(samples.len());
    for ((id, image), pred) in samples.iter().zip(&preds) {
        let file = file_name_for(id);
        crate::io::write_rgb8(&out_dir.join(&file), &render_panel(image, pred))?;
        infos.push(PanelInfo {
            id: id.clone(),
            file,
            p_fake: pred.p_fake,
            mean_edge: pred.edge.mean().unwrap_or(0.0) as f64,
            mean_map: pred.map.mean().unwrap_or(0.0) as f64,
        });
    }
    let json = serde_json::to_string_pretty(&infos).expect("serializable");
    crate::io::write_atomic(&out_dir.join("captions.json"), json.as_bytes())?;
    Ok(infos)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::rng::SeedStream;

    #[test]
    fn panel_layout_and_naming() {
        let model = Mfrn::new(&ModelConfig::miniature(), SeedStream::root(0)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let img = crate::data::toy::ToyFace::canonical().render(64);
        let infos = visualize(&model, &[("vid/0003".into(), img)], dir.path()).unwrap();
        assert_eq!(infos[0].file, "vid_0003.png");
        let panel = image::open(dir.path().join("vid_0003.png")).unwrap();
        assert_eq!((panel.width() as usize, panel.height() as usize), panel_dims(64));
        assert_eq!(panel_dims(64).0, 3 * 64 + 4 * MARGIN);
        assert!(dir.path().join("captions.json").exists());
    }

    #[test]
    fn unwritable_directory_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, b"x").unwrap();
        let model = Mfrn::new(&ModelConfig::miniature(), SeedStream::root(0)).unwrap();
        let img = crate::data::toy::ToyFace::canonical().render(64);
        assert!(visualize(&model, &[("a".into(), img)], &blocker.join("sub")).is_err());
    }
}
