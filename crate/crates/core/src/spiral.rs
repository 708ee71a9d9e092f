//! Spiral Array pitch geometry and the two tonal tension measures.
//!
//! Pitch classes sit on a helix indexed by the line of fifths: each step of a
//! fifth turns a quarter revolution and rises by `rise`. Chords and keys are
//! weighted centroids of pitch positions. Over a fragment, each 16th-note step
//! forms a cloud of the sounding pitch classes; its *cloud diameter* is the
//! largest pairwise distance and its *tensile strain* is the distance from the
//! cloud's centroid to the key center. Both raw curves are then smoothed with
//! a quarter-note moving average.

use serde::{Deserialize, Serialize};

use crate::corpus::roll::{PianoRoll, STEPS};
use crate::error::{Error, Result};

/// Moving-average window, in 16th steps, used to smooth raw tension curves.
pub const QUARTER_NOTE_STEPS: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpiralConfig {
    pub radius: f64,
    pub rise: f64,
    pub chord_weights: [f64; 3],
    pub key_weights: [f64; 3],
}

impl Default for SpiralConfig {
    fn default() -> Self {
        // The published key weights (0.516, 0.315, 0.168) sum to 0.999; they are
        // renormalized so the key center is a true convex combination.
        let key_sum = 0.516 + 0.315 + 0.168;
        Self {
            radius: 1.0,
            rise: (2.0f64 / 15.0).sqrt(),
            chord_weights: [0.536, 0.274, 0.190],
            key_weights: [0.516 / key_sum, 0.315 / key_sum, 0.168 / key_sum],
        }
    }
}

impl SpiralConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::InvalidInput(format!("radius must be > 0, got {}", self.radius)));
        }
        if !(self.rise > 0.0 && self.rise.is_finite()) {
            return Err(Error::InvalidInput(format!("rise must be > 0, got {}", self.rise)));
        }
        for (name, w) in [("chord_weights", &self.chord_weights), ("key_weights", &self.key_weights)] {
            if w.iter().any(|&x| !(x > 0.0)) {
                return Err(Error::InvalidInput(format!("{name} must be positive, got {w:?}")));
            }
            let sum: f64 = w.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidInput(format!("{name} must sum to 1, got {sum}")));
            }
        }
        Ok(())
    }
}

/// A pitch spelling as a position on the line of fifths (C = 0, G = 1, F = -1).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SpelledPitch(pub i32);

impl SpelledPitch {
    pub fn fifth_index(self) -> i32 {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpiralPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl SpiralPoint {
    pub const ORIGIN: SpiralPoint = SpiralPoint { x: 0.0, y: 0.0, z: 0.0 };

    pub fn distance(&self, other: &SpiralPoint) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    fn scaled(&self, s: f64) -> SpiralPoint {
        SpiralPoint { x: self.x * s, y: self.y * s, z: self.z * s }
    }

    fn plus(&self, o: &SpiralPoint) -> SpiralPoint {
        SpiralPoint { x: self.x + o.x, y: self.y + o.y, z: self.z + o.z }
    }
}

/// The notes sounding within one analysis window, with positive weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Cloud {
    members: Vec<SpelledPitch>,
    weights: Vec<f64>,
}

impl Cloud {
    /// Equal-weight cloud.
    pub fn new(members: Vec<SpelledPitch>) -> Self {
        let weights = vec![1.0; members.len()];
        Self { members, weights }
    }

    pub fn weighted(members: Vec<SpelledPitch>, weights: Vec<f64>) -> Result<Self> {
        if members.len() != weights.len() {
            return Err(Error::InvalidInput(format!(
                "{} members but {} weights",
                members.len(),
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|&&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidInput(format!("cloud weight must be positive, got {w}")));
        }
        Ok(Self { members, weights })
    }

    pub fn from_pitch_classes(pcs: &[u8]) -> Result<Self> {
        let members = pcs.iter().map(|&pc| spell(pc)).collect::<Result<Vec<_>>>()?;
        Ok(Self::new(members))
    }

    pub fn members(&self) -> &[SpelledPitch] {
        &self.members
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn push(&mut self, p: SpelledPitch, weight: f64) {
        self.members.push(p);
        self.weights.push(weight);
    }

    /// Every member moved by `k` steps along the line of fifths.
    pub fn shifted(&self, k: i32) -> Cloud {
        Cloud {
            members: self.members.iter().map(|p| SpelledPitch(p.0 + k)).collect(),
            weights: self.weights.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TensionKind {
    TensileStrain,
    CloudDiameter,
}

impl TensionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TensionKind::TensileStrain => "tensile_strain",
            TensionKind::CloudDiameter => "cloud_diameter",
        }
    }
}

/// One smoothed tension value per 16th step of a 4-bar fragment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensionCurve {
    pub kind: TensionKind,
    pub values: Vec<f64>,
}

impl TensionCurve {
    pub fn new(kind: TensionKind, values: Vec<f64>) -> Result<Self> {
        if values.len() != STEPS {
            return Err(Error::InvalidInput(format!(
                "tension curve needs {STEPS} values, got {}",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidInput(format!("tension value must be finite and >= 0, got {v}")));
        }
        Ok(Self { kind, values })
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeyCenter {
    pub point: SpiralPoint,
}

/// `(r sin(k pi/2), r cos(k pi/2), k h)`, with the quarter-turn sines taken exactly.
pub fn pitch_position(k: i32, cfg: &SpiralConfig) -> SpiralPoint {
    let (sin, cos) = match k.rem_euclid(4) {
        0 => (0.0, 1.0),
        1 => (1.0, 0.0),
        2 => (0.0, -1.0),
        _ => (-1.0, 0.0),
    };
    SpiralPoint {
        x: cfg.radius * sin,
        y: cfg.radius * cos,
        z: k as f64 * cfg.rise,
    }
}

/// Fixed spelling of MIDI pitch classes, flats for the black keys except F#.
const SPELLING: [i32; 12] = [0, -5, 2, -3, 4, -1, 6, 1, -4, 3, -2, 5];

pub fn spell(pitch_class: u8) -> Result<SpelledPitch> {
    SPELLING
        .get(pitch_class as usize)
        .map(|&k| SpelledPitch(k))
        .ok_or_else(|| Error::InvalidInput(format!("pitch class {pitch_class} not in 0..11")))
}

fn require_members(c: &Cloud) -> Result<()> {
    if c.is_empty() {
        return Err(Error::InvalidInput("empty cloud".into()));
    }
    Ok(())
}

pub fn cloud_diameter(c: &Cloud, cfg: &SpiralConfig) -> Result<f64> {
    require_members(c)?;
    let pts: Vec<SpiralPoint> = c.members.iter().map(|p| pitch_position(p.0, cfg)).collect();
    let mut best = 0.0f64;
    for (i, a) in pts.iter().enumerate() {
        for b in &pts[i + 1..] {
            best = best.max(a.distance(b));
        }
    }
    Ok(best)
}

pub fn center_of_effect(c: &Cloud, cfg: &SpiralConfig) -> Result<SpiralPoint> {
    require_members(c)?;
    let total: f64 = c.weights.iter().sum();
    let sum = c
        .members
        .iter()
        .zip(&c.weights)
        .fold(SpiralPoint::ORIGIN, |acc, (p, &w)| acc.plus(&pitch_position(p.0, cfg).scaled(w)));
    Ok(sum.scaled(1.0 / total))
}

fn combine(points: [SpiralPoint; 3], w: &[f64; 3]) -> SpiralPoint {
    points
        .iter()
        .zip(w)
        .fold(SpiralPoint::ORIGIN, |acc, (p, &wi)| acc.plus(&p.scaled(wi)))
}

/// Center of the major triad rooted at line-of-fifths index `k`.
pub fn major_chord_center(k: i32, cfg: &SpiralConfig) -> SpiralPoint {
    combine(
        [pitch_position(k, cfg), pitch_position(k + 1, cfg), pitch_position(k + 4, cfg)],
        &cfg.chord_weights,
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    Major,
    Minor,
}

/// Major key center: tonic, dominant and subdominant chord centers combined.
pub fn key_center(tonic_k: i32, mode: Mode, cfg: &SpiralConfig) -> Result<KeyCenter> {
    if mode != Mode::Major {
        return Err(Error::UnsupportedMode("only major key centers are modeled".into()));
    }
    let point = combine(
        [
            major_chord_center(tonic_k, cfg),
            major_chord_center(tonic_k + 1, cfg),
            major_chord_center(tonic_k - 1, cfg),
        ],
        &cfg.key_weights,
    );
    Ok(KeyCenter { point })
}

/// The C-major key center every fragment is measured against.
pub fn c_major_key(cfg: &SpiralConfig) -> KeyCenter {
    key_center(0, Mode::Major, cfg).expect("major mode is always supported")
}

pub fn tensile_strain(c: &Cloud, key: &KeyCenter, cfg: &SpiralConfig) -> Result<f64> {
    Ok(center_of_effect(c, cfg)?.distance(&key.point))
}

/// Centered moving average, truncated at the edges.
///
/// Output `i` averages input indices `[i - w/2, i + w/2 - 1 + w % 2]` clipped to
/// the curve.
pub fn moving_average(v: &[f64], w: usize) -> Vec<f64> {
    let w = w.max(1);
    let n = v.len();
    let back = w / 2;
    let fwd = w / 2 + w % 2 - 1;
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(back);
            let hi = (i + fwd).min(n.saturating_sub(1));
            let window = &v[lo..=hi];
            window.iter().sum::<f64>() / window.len() as f64
        })
        .collect()
}

/// The cloud of pitch classes sounding at one step of a roll.
pub fn step_cloud(roll: &PianoRoll, step: usize) -> Cloud {
    let mut cloud = Cloud::new(Vec::new());
    for pc in roll.sounding_pitch_classes(step).into_iter().flatten() {
        cloud.push(SpelledPitch(SPELLING[pc as usize]), 1.0);
    }
    cloud
}

/// Smoothed (tensile strain, cloud diameter) curves of a fragment.
///
/// Steps where both tracks rest contribute 0 to both raw curves.
pub fn tension_curves(
    roll: &PianoRoll,
    key: &KeyCenter,
    cfg: &SpiralConfig,
) -> Result<(TensionCurve, TensionCurve)> {
    roll.validate()?;
    let mut strain = vec![0.0; STEPS];
    let mut diameter = vec![0.0; STEPS];
    for step in 0..STEPS {
        let cloud = step_cloud(roll, step);
        if cloud.is_empty() {
            continue;
        }
        strain[step] = tensile_strain(&cloud, key, cfg)?;
        diameter[step] = cloud_diameter(&cloud, cfg)?;
    }
    Ok((
        TensionCurve::new(TensionKind::TensileStrain, moving_average(&strain, QUARTER_NOTE_STEPS))?,
        TensionCurve::new(TensionKind::CloudDiameter, moving_average(&diameter, QUARTER_NOTE_STEPS))?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn h() -> f64 {
        (2.0f64 / 15.0).sqrt()
    }

    fn cloud(ks: &[i32]) -> Cloud {
        Cloud::new(ks.iter().map(|&k| SpelledPitch(k)).collect())
    }

    #[test]
    fn pitch_positions() {
        let cfg = SpiralConfig::default();
        let p0 = pitch_position(0, &cfg);
        assert_abs_diff_eq!(p0.x, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p0.y, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p0.z, 0.0, epsilon = 1e-15);
        let p1 = pitch_position(1, &cfg);
        assert_abs_diff_eq!(p1.x, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p1.y, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p1.z, 0.365148, epsilon = 1e-6);
        let p4 = pitch_position(4, &cfg);
        assert_abs_diff_eq!(p4.x, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p4.y, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p4.z, 1.460593, epsilon = 1e-6);
    }

    #[test]
    fn spelling_table() {
        assert_eq!(spell(0).unwrap(), SpelledPitch(0));
        assert_eq!(spell(7).unwrap(), SpelledPitch(1));
        assert_eq!(spell(6).unwrap(), SpelledPitch(6));
        assert_eq!(spell(1).unwrap(), SpelledPitch(-5));
        assert!(matches!(spell(12), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn diameters() {
        let cfg = SpiralConfig::default();
        assert_eq!(cloud_diameter(&cloud(&[0]), &cfg).unwrap(), 0.0);
        assert_abs_diff_eq!(
            cloud_diameter(&cloud(&[0, 1]), &cfg).unwrap(),
            (2.0 + 2.0 / 15.0f64).sqrt(),
            epsilon = 1e-12
        );
        // C, E, G: the E-G pair is the widest.
        assert_abs_diff_eq!(
            cloud_diameter(&cloud(&[0, 4, 1]), &cfg).unwrap(),
            (2.0 + 9.0 * h() * h()).sqrt(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(cloud_diameter(&cloud(&[0, 4, 1]), &cfg).unwrap(), 1.78885, epsilon = 1e-5);
        assert!(cloud_diameter(&cloud(&[]), &cfg).is_err());
    }

    #[test]
    fn calibration_identities() {
        let cfg = SpiralConfig::default();
        let d = |a, b| pitch_position(a, &cfg).distance(&pitch_position(b, &cfg));
        assert_abs_diff_eq!(d(0, 1), (32.0f64 / 15.0).sqrt(), epsilon = 1e-9);
        assert_abs_diff_eq!(d(0, 4), (32.0f64 / 15.0).sqrt(), epsilon = 1e-9);
        assert_abs_diff_eq!(d(0, 6), 8.8f64.sqrt(), epsilon = 1e-9);
    }

    #[test]
    fn centers() {
        let cfg = SpiralConfig::default();
        let c = center_of_effect(&cloud(&[0]), &cfg).unwrap();
        assert_abs_diff_eq!(c.y, 1.0, epsilon = 1e-15);
        let c = center_of_effect(&cloud(&[0, 1]), &cfg).unwrap();
        assert_abs_diff_eq!(c.x, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(c.y, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(c.z, h() / 2.0, epsilon = 1e-15);
        let w = Cloud::weighted(vec![SpelledPitch(0), SpelledPitch(1)], vec![3.0, 1.0]).unwrap();
        let c = center_of_effect(&w, &cfg).unwrap();
        assert_abs_diff_eq!(c.x, 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(c.y, 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(c.z, h() / 4.0, epsilon = 1e-15);
        assert!(Cloud::weighted(vec![SpelledPitch(0)], vec![0.0]).is_err());
    }

    #[test]
    fn key_centers() {
        let cfg = SpiralConfig::default();
        let degenerate = SpiralConfig {
            chord_weights: [1.0, 0.0, 0.0],
            key_weights: [1.0, 0.0, 0.0],
            ..cfg.clone()
        };
        let k = key_center(0, Mode::Major, &degenerate).unwrap().point;
        assert_abs_diff_eq!(k.x, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(k.y, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(k.z, 0.0, epsilon = 1e-15);

        let cm = major_chord_center(0, &cfg);
        assert_abs_diff_eq!(cm.x, 0.274, epsilon = 1e-12);
        assert_abs_diff_eq!(cm.y, 0.726, epsilon = 1e-12);
        assert_abs_diff_eq!(cm.z, 1.034 * h(), epsilon = 1e-12);

        // Key center by the linear combination of the three chord centers.
        let [w1, w2, w3] = cfg.key_weights;
        let (a, b, c) = (major_chord_center(0, &cfg), major_chord_center(1, &cfg), major_chord_center(-1, &cfg));
        let k = key_center(0, Mode::Major, &cfg).unwrap().point;
        assert_abs_diff_eq!(k.x, w1 * a.x + w2 * b.x + w3 * c.x, epsilon = 1e-15);
        assert_abs_diff_eq!(k.y, w1 * a.y + w2 * b.y + w3 * c.y, epsilon = 1e-15);
        assert_abs_diff_eq!(k.z, w1 * a.z + w2 * b.z + w3 * c.z, epsilon = 1e-15);

        let d0 = key_center(0, Mode::Major, &cfg).unwrap().point.distance(&pitch_position(0, &cfg));
        let d1 = key_center(1, Mode::Major, &cfg).unwrap().point.distance(&pitch_position(1, &cfg));
        assert_abs_diff_eq!(d0, d1, epsilon = 1e-12);

        assert!(matches!(key_center(0, Mode::Minor, &cfg), Err(Error::UnsupportedMode(_))));
    }

    #[test]
    fn strains() {
        let cfg = SpiralConfig::default();
        let key = c_major_key(&cfg);
        let s_c = tensile_strain(&cloud(&[0]), &key, &cfg).unwrap();
        assert_abs_diff_eq!(s_c, pitch_position(0, &cfg).distance(&key.point), epsilon = 1e-15);
        let s_g = tensile_strain(&cloud(&[1]), &key, &cfg).unwrap();
        let s_fs = tensile_strain(&cloud(&[6]), &key, &cfg).unwrap();
        assert!(s_fs > s_g);
        let at_key = KeyCenter { point: center_of_effect(&cloud(&[0, 4, 1]), &cfg).unwrap() };
        assert_eq!(tensile_strain(&cloud(&[0, 4, 1]), &at_key, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn config_validation() {
        SpiralConfig::default().validate().unwrap();
        let bad = SpiralConfig { key_weights: [0.516, 0.315, 0.168], ..SpiralConfig::default() };
        assert!(bad.validate().is_err());
        let bad = SpiralConfig { radius: 0.0, ..SpiralConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn moving_average_cases() {
        let c = vec![2.5; 64];
        assert_eq!(moving_average(&c, 4), c);
        let mut imp = vec![0.0; 64];
        imp[10] = 1.0;
        let out = moving_average(&imp, 4);
        for (i, v) in out.iter().enumerate() {
            let expect = if (9..=12).contains(&i) { 0.25 } else { 0.0 };
            assert_eq!(*v, expect, "step {i}");
        }
        let ramp: Vec<f64> = (0..64).map(|i| i as f64).collect();
        assert_eq!(moving_average(&ramp, 1), ramp);
        // Edge truncation: step 0 averages steps 0 and 1 only.
        assert_eq!(moving_average(&ramp, 4)[0], 0.5);
        assert_eq!(moving_average(&ramp, 4)[63], (61.0 + 62.0 + 63.0) / 3.0);
    }

    proptest! {
        #[test]
        fn diameter_isometry(ks in prop::collection::vec(-6i32..=6, 1..6), shift in -12i32..12) {
            let cfg = SpiralConfig::default();
            let c = cloud(&ks);
            let a = cloud_diameter(&c, &cfg).unwrap();
            let b = cloud_diameter(&c.shifted(shift), &cfg).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn strain_shift_covariance(ks in prop::collection::vec(-6i32..=6, 1..6), tonic in -3i32..3, shift in -12i32..12) {
            let cfg = SpiralConfig::default();
            let c = cloud(&ks);
            let k0 = key_center(tonic, Mode::Major, &cfg).unwrap();
            let k1 = key_center(tonic + shift, Mode::Major, &cfg).unwrap();
            let a = tensile_strain(&c, &k0, &cfg).unwrap();
            let b = tensile_strain(&c.shifted(shift), &k1, &cfg).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn diameter_monotone_and_order_free(ks in prop::collection::vec(-6i32..=6, 1..6), extra in -6i32..=6) {
            let cfg = SpiralConfig::default();
            let c = cloud(&ks);
            let base = cloud_diameter(&c, &cfg).unwrap();
            let mut rev = ks.clone();
            rev.reverse();
            prop_assert_eq!(base, cloud_diameter(&cloud(&rev), &cfg).unwrap());
            let mut grown = c.clone();
            grown.push(SpelledPitch(extra), 1.0);
            prop_assert!(cloud_diameter(&grown, &cfg).unwrap() >= base);
        }

        #[test]
        fn moving_average_keeps_constants(c in 0.0f64..10.0, w in 1usize..9) {
            let v = vec![c; 64];
            for x in moving_average(&v, w) {
                prop_assert!((x - c).abs() <= 1e-12 * c.max(1.0));
            }
        }
    }
}
