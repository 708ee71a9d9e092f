use std::path::Path;

use clap::ValueEnum;
use serde_json::{json, Value};
use ttv_core::eval::{
    interaction_csv, interaction_grid, pitch_distribution, pitch_distribution_csv, ratio_chart_svg, scale_sweep,
    sweep_csv, Measure,
};
use ttv_core::latent::{AttributeVector, Criterion, VectorFile};
use ttv_core::vae::Checkpoint;

use super::{create_dir, invalid, to_json, write};
use crate::settings::Settings;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Experiment {
    /// Upward ratio against scale for each direction vector.
    Direction,
    /// High ratio against scale for each level vector.
    Level,
    /// Both tension kinds measured while applying each of two vectors.
    Interaction,
    /// Pitch-class counts before and after one edit.
    PitchDist,
}

pub struct EvalRequest {
    pub experiment: Experiment,
    pub n: usize,
    pub scales: Option<String>,
    pub vector: Option<String>,
    pub alpha: f64,
    pub bars: String,
    pub seed: u64,
}

const DIRECTION_SCALES: [f64; 9] = [-8.0, -6.0, -4.0, -2.0, 0.0, 2.0, 4.0, 6.0, 8.0];
const LEVEL_SCALES: [f64; 5] = [-6.0, -3.0, 0.0, 3.0, 6.0];

fn parse_scales(s: &str) -> anyhow::Result<Vec<f64>> {
    let v = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().ok().filter(|f| f.is_finite()))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| invalid(format!("bad scale list {s:?}")))?;
    if v.is_empty() {
        return Err(invalid("empty scale list"));
    }
    Ok(v)
}

fn parse_bars(s: &str) -> anyhow::Result<std::ops::Range<usize>> {
    let (a, b) = s.split_once("..").ok_or_else(|| invalid(format!("bar range {s:?} is not START..END")))?;
    let parse = |x: &str| x.trim().parse::<usize>().map_err(|_| invalid(format!("bad bar range {s:?}")));
    Ok(parse(a)?..parse(b)?)
}

fn measure(v: &AttributeVector) -> anyhow::Result<Measure> {
    let kind = Criterion::from_vector_name(&v.name)?.kind();
    Ok(Measure::for_vector(v, kind)?)
}

/// Vectors named in `--vector`, or every vector whose name ends in `suffix`.
fn pick<'a>(file: &'a VectorFile, names: Option<&str>, suffix: &str) -> anyhow::Result<Vec<&'a AttributeVector>> {
    let picked: Vec<&AttributeVector> = match names {
        Some(list) => list.split(',').map(|n| file.get(n.trim())).collect::<Result<_, _>>()?,
        None => file.vectors.iter().filter(|v| v.name.ends_with(suffix)).collect(),
    };
    if picked.is_empty() {
        return Err(invalid(format!("the vectors file has no {suffix} vectors")));
    }
    if let Some(bad) = picked.iter().find(|v| !v.name.ends_with(suffix)) {
        return Err(invalid(format!("vector {} does not fit this experiment (expected *{suffix})", bad.name)));
    }
    Ok(picked)
}

pub fn eval(s: &Settings, model: &Path, vectors: &Path, req: &EvalRequest, out: &Path) -> anyhow::Result<Value> {
    let ck = Checkpoint::load(model)?;
    let file = VectorFile::load(vectors)?;
    file.check_compatible(&ck.id(), ck.params.config.latent_dim)?;
    if req.n == 0 {
        return Err(invalid("--n must be positive"));
    }
    let trained = ck.schedule.trained;
    if !trained {
        log::warn!("the checkpoint was never trained; results describe a random model");
    }
    let scales = |default: &[f64]| match &req.scales {
        Some(s) => parse_scales(s),
        None => Ok(default.to_vec()),
    };
    create_dir(out)?;
    let p = &ck.params;
    let mut files = Vec::new();
    let mut put = |name: String, body: String| -> anyhow::Result<()> {
        write(&out.join(&name), body)?;
        files.push(name);
        Ok(())
    };

    let (label, results) = match req.experiment {
        Experiment::Direction | Experiment::Level => {
            let (label, suffix, grid) = if req.experiment == Experiment::Direction {
                ("direction", "_direction", &DIRECTION_SCALES[..])
            } else {
                ("level", "_level", &LEVEL_SCALES[..])
            };
            let scales = scales(grid)?;
            let mut reports = Vec::new();
            for v in pick(&file, req.vector.as_deref(), suffix)? {
                let r = scale_sweep(p, v, measure(v)?, &scales, req.n, req.seed, trained, &s.spiral)?;
                put(format!("{label}_{}.csv", v.name), sweep_csv(&r))?;
                let pts = r.rows.iter().map(|row| (row.scale, row.ratio)).collect();
                put(format!("{label}_{}.svg", v.name), ratio_chart_svg(&v.name, &[(format!("{label} ratio"), pts)]))?;
                reports.push(r);
            }
            (label, serde_json::to_value(&reports)?)
        }
        Experiment::Interaction => {
            let names = req.vector.as_deref().unwrap_or("tensile_strain_direction,cloud_diameter_direction");
            let pair: Vec<&AttributeVector> = names.split(',').map(|n| file.get(n.trim())).collect::<Result<_, _>>()?;
            let [a, b] = pair[..] else {
                return Err(invalid("interaction needs exactly two vectors"));
            };
            let r = interaction_grid(p, a, b, [measure(a)?, measure(b)?], &scales(&DIRECTION_SCALES)?, req.n, req.seed, trained, &s.spiral)?;
            put("interaction.csv".into(), interaction_csv(&r))?;
            let mut series = Vec::new();
            for v in [a, b] {
                let rows: Vec<_> = r.rows.iter().filter(|row| row.vector == v.name).collect();
                series.push((format!("{} → tensile", v.name), rows.iter().map(|row| (row.scale, row.tensile_ratio)).collect()));
                series.push((format!("{} → diameter", v.name), rows.iter().map(|row| (row.scale, row.diameter_ratio)).collect()));
            }
            put("interaction.svg".into(), ratio_chart_svg("interaction", &series))?;
            ("interaction", serde_json::to_value(&r)?)
        }
        Experiment::PitchDist => {
            let name = req.vector.as_deref().unwrap_or("tensile_strain_direction");
            let v = file.get(name)?;
            let r = pitch_distribution(p, v, req.alpha, parse_bars(&req.bars)?, req.n, req.seed, trained, &s.spiral)?;
            put("pitch_dist.csv".into(), pitch_distribution_csv(&r))?;
            ("pitch_dist", serde_json::to_value(&r)?)
        }
    };
    let summary = json!({
        "experiment": label,
        "checkpoint_id": ck.id(),
        "untrained_model": !trained,
        "n": req.n,
        "rng_seed": req.seed,
        "results": results,
    });
    put(format!("{label}.json"), to_json(&summary))?;
    Ok(json!({ "experiment": label, "out": out.display().to_string(), "files": files, "untrained_model": !trained }))
}
