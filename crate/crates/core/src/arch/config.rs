use std::fmt;
use std::str::FromStr;

use super::{ArchError, FeatureShape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Vgg16,
    Resnet50,
    InceptionV3,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Vgg16, Family::Resnet50, Family::InceptionV3];

    pub fn as_str(&self) -> &'static str {
        match self {
            Family::Vgg16 => "vgg16",
            Family::Resnet50 => "resnet50",
            Family::InceptionV3 => "inception_v3",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = ArchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "vgg16" => Ok(Family::Vgg16),
            "resnet50" => Ok(Family::Resnet50),
            "inception_v3" | "inceptionv3" => Ok(Family::InceptionV3),
            other => Err(ArchError::Config(format!(
                "unknown family `{other}` (expected vgg16, resnet50 or inception_v3)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DepthPreset {
    /// Canonical published topology.
    Full,
    /// At most 12 weighted layers, keeping the family's signature motif.
    Desk,
}

impl DepthPreset {
    pub fn as_str(&self) -> &'static str {
        match self {
            DepthPreset::Full => "full",
            DepthPreset::Desk => "desk",
        }
    }
}

impl fmt::Display for DepthPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DepthPreset {
    type Err = ArchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "full" => Ok(DepthPreset::Full),
            "desk" => Ok(DepthPreset::Desk),
            other => Err(ArchError::Config(format!("unknown preset `{other}` (expected full or desk)"))),
        }
    }
}

/// Channel multiplier `num/den` in `(0, 1]`. Scaled counts round up and
/// never drop below 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct WidthScale {
    num: u32,
    den: u32,
}

impl WidthScale {
    pub const ONE: WidthScale = WidthScale { num: 1, den: 1 };

    pub fn new(num: u32, den: u32) -> Result<Self, ArchError> {
        if num == 0 || den == 0 || num > den {
            return Err(ArchError::Config(format!("width scale {num}/{den} must lie in (0, 1]")));
        }
        let g = gcd(num, den);
        Ok(Self {
            num: num / g,
            den: den / g,
        })
    }

    pub fn apply(&self, channels: usize) -> usize {
        let scaled = (channels as u64 * self.num as u64).div_ceil(self.den as u64);
        (scaled as usize).max(1)
    }

    pub fn as_f64(&self) -> f64 {
        f64::from(self.num) / f64::from(self.den)
    }
}

impl fmt::Display for WidthScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl FromStr for WidthScale {
    type Err = ArchError;

    /// Accepts `n/d`, an integer, or a decimal such as `0.125`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let bad = || ArchError::Config(format!("cannot parse width scale `{s}`"));
        if let Some((n, d)) = s.split_once('/') {
            return WidthScale::new(n.trim().parse().map_err(|_| bad())?, d.trim().parse().map_err(|_| bad())?);
        }
        match s.split_once('.') {
            None => WidthScale::new(s.parse().map_err(|_| bad())?, 1),
            Some((int, frac)) => {
                if frac.is_empty() || frac.len() > 9 || !frac.bytes().all(|b| b.is_ascii_digit()) {
                    return Err(bad());
                }
                let den = 10u32.pow(frac.len() as u32);
                let int: u32 = if int.is_empty() { 0 } else { int.parse().map_err(|_| bad())? };
                let frac: u32 = frac.parse().map_err(|_| bad())?;
                WidthScale::new(int.checked_mul(den).and_then(|v| v.checked_add(frac)).ok_or_else(bad)?, den)
            }
        }
    }
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ArchitectureConfig {
    pub family: Family,
    pub preset: DepthPreset,
    pub input_size: FeatureShape,
    pub num_classes: usize,
    pub width_scale: WidthScale,
}

impl ArchitectureConfig {
    /// Defaults: 3×224×224 (3×299×299 for inception) at full width for the
    /// full preset; 3×64×64 at 1/8 width for the desk preset.
    pub fn new(family: Family, preset: DepthPreset) -> Self {
        let (side, width_scale) = match (preset, family) {
            (DepthPreset::Desk, _) => (64, WidthScale { num: 1, den: 8 }),
            (DepthPreset::Full, Family::InceptionV3) => (299, WidthScale::ONE),
            (DepthPreset::Full, _) => (224, WidthScale::ONE),
        };
        Self {
            family,
            preset,
            input_size: FeatureShape::new(3, side, side),
            num_classes: 2,
            width_scale,
        }
    }

    pub fn with_input_size(mut self, input: FeatureShape) -> Self {
        self.input_size = input;
        self
    }

    pub fn with_width_scale(mut self, scale: WidthScale) -> Self {
        self.width_scale = scale;
        self
    }

    pub fn with_num_classes(mut self, k: usize) -> Self {
        self.num_classes = k;
        self
    }

    pub fn validate(&self) -> Result<(), ArchError> {
        if self.num_classes < 2 {
            return Err(ArchError::Config(format!("num_classes must be >= 2, got {}", self.num_classes)));
        }
        if self.input_size.numel() == 0 {
            return Err(ArchError::Config(format!("empty input size {}", self.input_size)));
        }
        Ok(())
    }

    /// `key = value` lines; the format read by [`ArchitectureConfig::parse`].
    pub fn to_text(&self) -> String {
        format!(
            "family = {}\npreset = {}\ninput = {}\nnum_classes = {}\nwidth_scale = {}\n",
            self.family, self.preset, self.input_size, self.num_classes, self.width_scale
        )
    }

    /// Parses `key = value` lines. `#` starts a comment. `family` is required;
    /// other keys fall back to the family/preset defaults.
    pub fn parse(text: &str) -> Result<Self, ArchError> {
        let mut family = None;
        let mut preset = None;
        let mut input = None;
        let mut classes = None;
        let mut width = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ArchError::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            let value = value.trim();
            match key.trim() {
                "family" => family = Some(value.parse::<Family>()?),
                "preset" => preset = Some(value.parse::<DepthPreset>()?),
                "input" | "input_size" => input = Some(parse_shape(value)?),
                "num_classes" => {
                    classes = Some(
                        value
                            .parse::<usize>()
                            .map_err(|_| ArchError::Config(format!("bad num_classes `{value}`")))?,
                    )
                }
                "width_scale" => width = Some(value.parse::<WidthScale>()?),
                other => return Err(ArchError::Config(format!("line {}: unknown key `{other}`", lineno + 1))),
            }
        }
        let family = family.ok_or_else(|| ArchError::Config("missing `family`".into()))?;
        let mut cfg = ArchitectureConfig::new(family, preset.unwrap_or(DepthPreset::Full));
        if let Some(i) = input {
            cfg.input_size = i;
        }
        if let Some(k) = classes {
            cfg.num_classes = k;
        }
        if let Some(w) = width {
            cfg.width_scale = w;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses `CxHxW`, or `HxW` / a single side length (3 channels implied).
pub fn parse_shape(s: &str) -> Result<FeatureShape, ArchError> {
    let parts: Result<Vec<usize>, _> = s.split(['x', 'X']).map(|p| p.trim().parse::<usize>()).collect();
    let parts = parts.map_err(|_| ArchError::Config(format!("cannot parse shape `{s}`")))?;
    match parts[..] {
        [c, h, w] => Ok(FeatureShape::new(c, h, w)),
        [h, w] => Ok(FeatureShape::new(3, h, w)),
        [side] => Ok(FeatureShape::new(3, side, side)),
        _ => Err(ArchError::Config(format!("cannot parse shape `{s}`"))),
    }
}
