//! Extraction, harmonization and inference stages. Each works core by core
//! and records a per-core outcome instead of aborting the run.

use std::path::{Path, PathBuf};

use serde_json::json;
use stainloop_core::harmonize::{
    calibrate_unstained, compute_channel_cdf, harmonize_he_with, tissue_mask, ChannelCdf, HeReference,
};
use stainloop_core::image::WHITE;
use stainloop_core::inference::{run_pathway, PathwayKind};
use stainloop_core::ingest::{
    downsample_to_mpp, extract_core, load_core_image, parse_roi, ExtractOptions, RasterSource, RoiPolygon,
};
use stainloop_core::{CoreImage, StainState};

use crate::error::{CliError, CliResult};
use crate::layout::{CoreStatus, StageStatus};
use crate::manifest::{CoreEntry, Role};
use crate::provenance::{remove_output, sha256_file, WorkKey};
use crate::Context;

/// Load a run-directory image for `role`.
pub fn load_role(ctx: &Context, core_id: &str, role: Role) -> CliResult<CoreImage> {
    let path = ctx.layout.role_path(core_id, role);
    let mut img = load_core_image(&path, Some(ctx.config.target_mpp))?;
    img.core_id = core_id.to_owned();
    img.stain_state = role.stain_state();
    Ok(img)
}

fn save(key: &WorkKey, img: &CoreImage, path: &Path) -> CliResult<()> {
    img.save_png(path)?;
    key.write_sidecar(path, sha256_file(path)?)
}

/// Register run-directory inputs, failing with a readable reason if one is
/// absent.
fn require_inputs(ctx: &Context, key: &mut WorkKey, core_id: &str, roles: &[Role]) -> Result<(), String> {
    for &role in roles {
        let p = ctx.layout.role_path(core_id, role);
        if !p.is_file() {
            return Err(format!("missing input {role} ({}); an earlier stage did not succeed", ctx.layout.rel(&p)));
        }
        key.input(role.as_str(), ctx.layout.rel(&p), &p).map_err(|e| e.to_string())?;
    }
    Ok(())
}

/// The polygon labelled with the core id, or the only polygon in the file.
pub fn select_roi(rois: Vec<RoiPolygon>, core_id: &str) -> Result<RoiPolygon, String> {
    let labels: Vec<String> = rois.iter().map(|r| r.label.clone()).collect();
    let mut matching: Vec<RoiPolygon> = rois.iter().filter(|r| r.label == core_id).cloned().collect();
    match (matching.len(), rois.len()) {
        (1, _) => Ok(matching.remove(0)),
        (0, 1) => Ok(rois.into_iter().next().expect("one roi")),
        (0, 0) => Err("ROI file has no polygons".into()),
        (0, _) => Err(format!("no ROI labelled `{core_id}` among [{}]", labels.join(", "))),
        (n, _) => Err(format!("{n} ROIs are labelled `{core_id}`")),
    }
}

// ---- extract ----

fn extract_one(ctx: &Context, core: &CoreEntry) -> CoreStatus {
    let id = core.core_id.as_str();
    let outputs = [ctx.layout.role_path(id, Role::GusRaw), ctx.layout.role_path(id, Role::GheRaw)];
    let params = json!({
        "mpp_chain": [core.source_mpp, ctx.config.target_mpp],
        "strip_height": ctx.config.strip_height,
        "fill": WHITE,
    });
    let mut key = WorkKey::new("extract", Some(id), params);
    let sources = [
        ("unstained_path", &core.unstained_path),
        ("roi_unstained", &core.roi_unstained),
        ("stained_path", &core.stained_path),
        ("roi_stained", &core.roi_stained),
    ];
    for (role, path) in sources {
        let shown = ctx.manifest.display_path(path);
        if !path.is_file() {
            outputs.iter().for_each(|p| remove_output(p));
            return CoreStatus::failed(id, format!("missing {role} file {shown}"));
        }
        if let Err(e) = key.input(role, shown, path) {
            return CoreStatus::failed(id, e.to_string());
        }
    }
    if !ctx.force && key.is_fresh(&outputs) {
        return CoreStatus::ok(id, true);
    }

    let run = || -> CliResult<()> {
        let jobs = [
            (&core.unstained_path, &core.roi_unstained, StainState::Unstained, &outputs[0]),
            (&core.stained_path, &core.roi_stained, StainState::Stained, &outputs[1]),
        ];
        for (slide, roi_path, state, out) in jobs {
            let bytes = std::fs::read(roi_path).map_err(|e| CliError::io(roi_path, e))?;
            let roi = select_roi(parse_roi(&bytes)?, id).map_err(|m| {
                CliError::Manifest(format!("{}: {m}", ctx.manifest.display_path(roi_path)))
            })?;
            let source = RasterSource::open(slide, Some(core.source_mpp), state)?;
            let opts = ExtractOptions {
                fill: WHITE,
                strip_height: ctx.config.strip_height,
            };
            let mut img = downsample_to_mpp(&extract_core(&source, &roi, opts)?, ctx.config.target_mpp)?;
            img.core_id = id.to_owned();
            save(&key, &img, out)?;
        }
        Ok(())
    };
    match run() {
        Ok(()) => CoreStatus::ok(id, false),
        Err(e) => {
            outputs.iter().for_each(|p| remove_output(p));
            CoreStatus::failed(id, e.to_string())
        }
    }
}

pub fn extract(ctx: &Context) -> CliResult<StageStatus> {
    let cores = ctx.par_map(&ctx.manifest.cores, |c| extract_one(ctx, c));
    Ok(StageStatus {
        stage: "extract".into(),
        cores,
    })
}

// ---- harmonize ----

/// Reference statistics shared by every core.
pub struct References {
    pub he: HeReference,
    pub unstained_cdf: ChannelCdf,
    pub inputs: Vec<(String, PathBuf)>,
}

fn load_reference(ctx: &Context, path: &Path) -> CliResult<CoreImage> {
    let mpp = ctx.manifest.reference.mpp.unwrap_or(ctx.config.target_mpp);
    let img = load_core_image(path, Some(mpp))?;
    if (img.mpp - ctx.config.target_mpp).abs() > 1e-12 {
        return Ok(downsample_to_mpp(&img, ctx.config.target_mpp)?);
    }
    Ok(img)
}

pub fn load_references(ctx: &Context) -> CliResult<References> {
    let r = &ctx.manifest.reference;
    let wrap = |what: &str, p: &Path, e: CliError| {
        CliError::Config(format!("{what} {}: {e}", ctx.manifest.display_path(p)))
    };
    let he_img = load_reference(ctx, &r.he_reference_path).map_err(|e| wrap("H&E reference", &r.he_reference_path, e))?;
    let he = HeReference::from_image(&he_img, &ctx.config.harmonize_params())
        .map_err(|e| wrap("H&E reference", &r.he_reference_path, e.into()))?;
    let us_img = load_reference(ctx, &r.unstained_reference_path)
        .map_err(|e| wrap("unstained reference", &r.unstained_reference_path, e))?;
    let mask = tissue_mask(&us_img, ctx.config.mask);
    let unstained_cdf = compute_channel_cdf(&us_img, &mask)
        .map_err(|e| wrap("unstained reference", &r.unstained_reference_path, e.into()))?;
    Ok(References {
        he,
        unstained_cdf,
        inputs: vec![
            ("he_reference".into(), r.he_reference_path.clone()),
            ("unstained_reference".into(), r.unstained_reference_path.clone()),
        ],
    })
}

fn harmonize_one(ctx: &Context, refs: &References, core: &CoreEntry) -> CoreStatus {
    let id = core.core_id.as_str();
    let outputs = [ctx.layout.role_path(id, Role::Gus), ctx.layout.role_path(id, Role::Ghe)];
    let params = json!({
        "target_mpp": ctx.config.target_mpp,
        "harmonize": ctx.config.harmonize_params(),
        "channel_weights": ctx.config.channel_weights,
    });
    let mut key = WorkKey::new("harmonize", Some(id), params);
    let fail = |reason: String| {
        outputs.iter().for_each(|p| remove_output(p));
        CoreStatus::failed(id, reason)
    };
    if let Err(reason) = require_inputs(ctx, &mut key, id, &[Role::GusRaw, Role::GheRaw]) {
        return fail(reason);
    }
    for (role, path) in &refs.inputs {
        if let Err(e) = key.input(role, ctx.manifest.display_path(path), path) {
            return fail(e.to_string());
        }
    }
    if !ctx.force && key.is_fresh(&outputs) {
        return CoreStatus::ok(id, true);
    }
    let run = || -> CliResult<()> {
        let ghe_raw = load_role(ctx, id, Role::GheRaw)?;
        let ghe = harmonize_he_with(&ghe_raw, &refs.he, &ctx.config.harmonize_params())?;
        let gus_raw = load_role(ctx, id, Role::GusRaw)?;
        let mask = tissue_mask(&gus_raw, ctx.config.mask);
        if mask.is_empty() {
            return Err(stainloop_core::Error::InsufficientTissue(format!("unstained core `{id}` has no tissue")).into());
        }
        let gus = calibrate_unstained(&gus_raw, &mask, &refs.unstained_cdf, ctx.config.channel_weights)?;
        save(&key, &gus, &outputs[0])?;
        save(&key, &ghe, &outputs[1])
    };
    match run() {
        Ok(()) => CoreStatus::ok(id, false),
        Err(e) => fail(e.to_string()),
    }
}

pub fn harmonize(ctx: &Context) -> CliResult<StageStatus> {
    let refs = load_references(ctx)?;
    let cores = ctx.par_map(&ctx.manifest.cores, |c| harmonize_one(ctx, &refs, c));
    Ok(StageStatus {
        stage: "harmonize".into(),
        cores,
    })
}

// ---- infer ----

/// Pathways actually run: the loop already yields the VDS, so a separate
/// destain run is dropped when both are selected.
pub fn pathway_plan(selected: &[PathwayKind]) -> Vec<PathwayKind> {
    let mut plan: Vec<PathwayKind> = PathwayKind::ALL.into_iter().filter(|p| selected.contains(p)).collect();
    if plan.contains(&PathwayKind::DestainRestain) {
        plan.retain(|p| *p != PathwayKind::Destain);
    }
    plan
}

fn pathway_io(kind: PathwayKind) -> (Role, &'static [Role]) {
    match kind {
        PathwayKind::Destain => (Role::Ghe, &[Role::Vds]),
        PathwayKind::DirectStain => (Role::Gus, &[Role::Vhe]),
        PathwayKind::DestainRestain => (Role::Ghe, &[Role::Vds, Role::Vher]),
    }
}

/// Returns `Ok(cached)` or a failure reason.
fn infer_pathway(ctx: &Context, id: &str, kind: PathwayKind) -> Result<(bool, Vec<String>), String> {
    let (input, roles) = pathway_io(kind);
    let mut outputs: Vec<PathBuf> = roles.iter().map(|&r| ctx.layout.role_path(id, r)).collect();
    outputs.push(ctx.layout.grid_path(id, kind.as_str()));
    let pathway = ctx.config.pathway(kind);
    let params = json!({
        "pathway": pathway,
        "tiling": ctx.config.tiling(),
        "mask": ctx.config.mask,
    });
    let mut key = WorkKey::new("infer", Some(id), params);
    let fail = |reason: String| {
        outputs.iter().for_each(|p| remove_output(p));
        Err(format!("{}: {reason}", kind.as_str()))
    };
    if let Err(reason) = require_inputs(ctx, &mut key, id, &[input]) {
        return fail(reason);
    }
    if !ctx.force && key.is_fresh(&outputs) {
        return Ok((true, Vec::new()));
    }
    let run = || -> CliResult<Vec<String>> {
        let core = load_role(ctx, id, input)?;
        let mask = tissue_mask(&core, ctx.config.mask);
        let out = run_pathway(&core, &mask, &pathway, ctx.config.tiling())?;
        let images: Vec<&CoreImage> = out.intermediates.iter().chain(std::iter::once(&out.output)).collect();
        for (img, path) in images.into_iter().zip(&outputs) {
            save(&key, img, path)?;
        }
        let grid = json!({ "pathway": kind.as_str(), "grid": out.grid, "warnings": out.warnings });
        let mut text = serde_json::to_string_pretty(&grid)?;
        text.push('\n');
        key.write(outputs.last().expect("grid path"), text.as_bytes())?;
        Ok(out.warnings)
    };
    match run() {
        Ok(warnings) => Ok((false, warnings)),
        Err(e) => fail(e.to_string()),
    }
}

fn infer_one(ctx: &Context, core: &CoreEntry) -> CoreStatus {
    let id = core.core_id.as_str();
    let mut cached = true;
    let mut warnings = Vec::new();
    let mut errors = Vec::new();
    for kind in pathway_plan(&ctx.pathways) {
        match infer_pathway(ctx, id, kind) {
            Ok((c, w)) => {
                cached &= c;
                warnings.extend(w);
            }
            Err(reason) => errors.push(reason),
        }
    }
    let mut status = if errors.is_empty() {
        CoreStatus::ok(id, cached)
    } else {
        CoreStatus::failed(id, errors.join("; "))
    };
    status.warnings = warnings;
    status
}

pub fn infer(ctx: &Context) -> CliResult<StageStatus> {
    let cores = ctx.par_map(&ctx.manifest.cores, |c| infer_one(ctx, c));
    Ok(StageStatus {
        stage: "infer".into(),
        cores,
    })
}
