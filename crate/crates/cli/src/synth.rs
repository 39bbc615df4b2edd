//! Bundled synthetic dataset: paired unstained/stained "slides" with GeoJSON
//! ROIs, reference images, a manifest and a config wired to affine mock
//! backends.

use std::f64::consts::TAU;
use std::path::Path;

use image::{ImageBuffer, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use stainloop_core::image::to_u8;
use stainloop_core::inference::BackendSpec;
use stainloop_core::synth::{add_noise, unit_columns, Scene, REFERENCE_STAINS};

use crate::error::{CliError, CliResult};
use crate::provenance::write_file;

/// Destain mock: damps red and blue, lifts green.
pub const DESTAIN_MATRIX: [[f64; 3]; 3] = [[0.8, 0.0, 0.0], [0.0, 0.85, 0.0], [0.0, 0.0, 0.8]];
pub const DESTAIN_OFFSET: [f64; 3] = [0.0, 35.0, 0.0];

pub fn destain_mock() -> BackendSpec {
    BackendSpec::AffineColor {
        matrix: DESTAIN_MATRIX,
        offset: DESTAIN_OFFSET,
    }
}

/// Exact inverse of the destain mock.
pub fn stain_mock() -> BackendSpec {
    let m = DESTAIN_MATRIX;
    let inv = [[1.0 / m[0][0], 0.0, 0.0], [0.0, 1.0 / m[1][1], 0.0], [0.0, 0.0, 1.0 / m[2][2]]];
    let offset = std::array::from_fn(|k| -DESTAIN_OFFSET[k] * inv[k][k]);
    BackendSpec::AffineColor { matrix: inv, offset }
}

/// Stain vectors of the "external site": both columns tilted away from the
/// reference.
const SITE_STAINS: [[f64; 2]; 3] = [[0.56, 0.12], [0.76, 0.95], [0.33, 0.28]];

const SLIDE_MPP: f64 = 0.25;
const TARGET_MPP: f64 = 0.5;

#[derive(Clone, Copy, Debug)]
pub struct SynthOptions {
    pub cores: usize,
    /// Core edge length at the target resolution.
    pub size: u32,
    pub seed: u64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            cores: 6,
            size: 256,
            seed: 7,
        }
    }
}

fn save(img: &RgbImage, path: &Path) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    img.save(path)
        .map_err(|e| CliError::Config(format!("writing {}: {e}", path.display())))
}

/// A polygon around the scene disc in slide pixels, as GeoJSON.
fn roi_geojson(label: &str, center: (f64, f64), radius: f64) -> String {
    let ring: Vec<String> = (0..=32)
        .map(|i| {
            let a = TAU * f64::from(i % 32) / 32.0;
            format!("[{:.3}, {:.3}]", center.0 + radius * a.cos(), center.1 + radius * a.sin())
        })
        .collect();
    format!(
        "{{\"type\": \"FeatureCollection\", \"features\": [{{\"type\": \"Feature\", \"properties\": {{\"name\": \"{label}\"}}, \
         \"geometry\": {{\"type\": \"Polygon\", \"coordinates\": [[{}]]}}}}]}}\n",
        ring.join(", ")
    )
}

/// Slide pixel `(x, y)` shows scene point `((x - ox) / k, (y - oy) / k)`
/// rotated by `theta` about the scene centre.
fn render_slide(
    w: u32,
    h: u32,
    origin: (f64, f64),
    theta: f64,
    scene: &Scene,
    f: impl Fn(f64, f64) -> [u8; 3],
) -> RgbImage {
    let k = TARGET_MPP / SLIDE_MPP;
    let (c, s) = (theta.cos(), theta.sin());
    let (cx, cy) = (scene.width / 2.0, scene.height / 2.0);
    ImageBuffer::from_fn(w, h, |x, y| {
        let (u, v) = ((f64::from(x) - origin.0) / k - cx, (f64::from(y) - origin.1) / k - cy);
        Rgb(f(c * u - s * v + cx, s * u + c * v + cy))
    })
}

fn core_image(scene: &Scene, size: u32, f: impl Fn(&Scene, f64, f64) -> [u8; 3]) -> RgbImage {
    ImageBuffer::from_fn(size, size, |x, y| Rgb(f(scene, f64::from(x), f64::from(y))))
}

/// Write the dataset under `dir`; returns the manifest path.
pub fn write_dataset(dir: &Path, opts: SynthOptions) -> CliResult<std::path::PathBuf> {
    let size = opts.size;
    let fsize = f64::from(size);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let site = unit_columns(SITE_STAINS);
    let k = TARGET_MPP / SLIDE_MPP;
    let slide = (k * fsize) as u32 + 64;

    let mut manifest = String::from(
        "# Synthetic dataset written by `stainloop synth`.\n\n\
         [reference]\n\
         he_reference_path = \"reference/he_reference.png\"\n\
         unstained_reference_path = \"reference/unstained_reference.png\"\n\
         training_he = [\"reference/training_he_0.png\", \"reference/training_he_1.png\"]\n\
         training_unstained = [\"reference/training_unstained_0.png\", \"reference/training_unstained_1.png\"]\n",
    );
    struct CoreDraw {
        id: String,
        scene_seed: u64,
        stained_origin: (f64, f64),
        unstained_origin: (f64, f64),
        theta: f64,
    }
    let draws: Vec<CoreDraw> = (0..opts.cores)
        .map(|i| CoreDraw {
            id: format!("core{:02}", i + 1),
            scene_seed: rng.random::<u64>(),
            stained_origin: (32.0 + rng.random_range(-8.0..8.0), 32.0 + rng.random_range(-8.0..8.0)),
            // the unstained scan is a separate, unregistered acquisition
            unstained_origin: (32.0 + rng.random_range(-8.0..8.0), 32.0 + rng.random_range(-8.0..8.0)),
            theta: rng.random_range(-3.0f64..3.0).to_radians(),
        })
        .collect();

    draws.par_iter().try_for_each(|d| -> CliResult<()> {
        let id = &d.id;
        let scene = Scene::new(d.scene_seed, fsize, fsize);
        let mut stained = render_slide(slide, slide, d.stained_origin, 0.0, &scene, |x, y| scene.stained_pixel(x, y, &site));
        add_noise(&mut stained, 1.5, d.scene_seed ^ 1);
        let mut unstained =
            render_slide(slide, slide, d.unstained_origin, d.theta, &scene, |x, y| scene.unstained_pixel(x, y));
        add_noise(&mut unstained, 1.5, d.scene_seed ^ 2);
        save(&stained, &dir.join(format!("slides/{id}_stained.png")))?;
        save(&unstained, &dir.join(format!("slides/{id}_unstained.png")))?;

        let radius = 0.49 * fsize * k;
        let centre = |o: (f64, f64)| (o.0 + k * fsize / 2.0, o.1 + k * fsize / 2.0);
        write_file(&dir.join(format!("rois/{id}_stained.geojson")), roi_geojson(id, centre(d.stained_origin), radius).as_bytes())?;
        write_file(
            &dir.join(format!("rois/{id}_unstained.geojson")),
            roi_geojson(id, centre(d.unstained_origin), radius).as_bytes(),
        )
    })?;
    for d in &draws {
        let id = &d.id;
        manifest.push_str(&format!(
            "\n[[cores]]\ncore_id = \"{id}\"\nunstained_path = \"slides/{id}_unstained.png\"\n\
             stained_path = \"slides/{id}_stained.png\"\nroi_unstained = \"rois/{id}_unstained.geojson\"\n\
             roi_stained = \"rois/{id}_stained.geojson\"\nsource_mpp = {SLIDE_MPP}\n"
        ));
    }

    // training-site references at the target resolution
    let stained_ref = |s: &Scene, x: f64, y: f64| s.stained_pixel(x, y, &REFERENCE_STAINS);
    // the training site's unstained scans are darker
    let unstained_ref = |s: &Scene, x: f64, y: f64| s.unstained_pixel(x, y).map(|v| to_u8(f64::from(v) - 18.0));
    let refs: [(&str, u64, bool); 6] = [
        ("he_reference", 1000, true),
        ("unstained_reference", 1001, false),
        ("training_he_0", 1002, true),
        ("training_he_1", 1003, true),
        ("training_unstained_0", 1004, false),
        ("training_unstained_1", 1005, false),
    ];
    refs.par_iter().try_for_each(|&(name, seed, is_he)| {
        let scene = Scene::new(opts.seed.wrapping_mul(31).wrapping_add(seed), fsize, fsize);
        let mut img = if is_he { core_image(&scene, size, stained_ref) } else { core_image(&scene, size, unstained_ref) };
        add_noise(&mut img, 1.5, seed);
        save(&img, &dir.join(format!("reference/{name}.png")))
    })?;

    let manifest_path = dir.join("manifest.toml");
    write_file(&manifest_path, manifest.as_bytes())?;
    write_file(&dir.join("config.toml"), mock_config(128).as_bytes())?;
    Ok(manifest_path)
}

fn matrix_toml(m: &[[f64; 3]; 3]) -> String {
    let rows: Vec<String> = m.iter().map(|r| format!("[{}, {}, {}]", r[0], r[1], r[2])).collect();
    format!("[{}]", rows.join(", "))
}

/// Config with the affine mock backends.
pub fn mock_config(patch_size: u32) -> String {
    let (BackendSpec::AffineColor { matrix: dm, offset: doff }, BackendSpec::AffineColor { matrix: sm, offset: soff }) =
        (destain_mock(), stain_mock())
    else {
        unreachable!()
    };
    format!(
        "target_mpp = {TARGET_MPP}\npatch_size = {patch_size}\ntissue_min = 0.05\nalign = true\n\n\
         [backends.destain]\nkind = \"affine_color\"\nmatrix = {}\noffset = [{}, {}, {}]\n\n\
         [backends.stain]\nkind = \"affine_color\"\nmatrix = {}\noffset = [{}, {}, {}]\n",
        matrix_toml(&dm),
        doff[0],
        doff[1],
        doff[2],
        matrix_toml(&sm),
        soff[0],
        soff[1],
        soff[2]
    )
}

/// Apply an affine colour map to every PNG in `in_dir`, writing same-named
/// files to `out_dir`. Stands in for an external model runner.
pub fn mock_backend(in_dir: &Path, out_dir: &Path, spec: &BackendSpec) -> CliResult<usize> {
    let BackendSpec::AffineColor { matrix, offset } = spec else {
        return Err(CliError::Config("mock backend needs an affine_color spec".into()));
    };
    let mut names: Vec<_> = std::fs::read_dir(in_dir)
        .map_err(|e| CliError::io(in_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "png"))
        .collect();
    names.sort();
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    for path in &names {
        let mut img = stainloop_core::ingest::load_rgb(path)?;
        for px in img.pixels_mut() {
            let v = px.0.map(f64::from);
            px.0 = std::array::from_fn(|k| to_u8((0..3).map(|j| matrix[k][j] * v[j]).sum::<f64>() + offset[k]));
        }
        save(&img, &out_dir.join(path.file_name().expect("file name")))?;
    }
    Ok(names.len())
}
