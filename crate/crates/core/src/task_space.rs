//! Synthetic prompt universe.
//!
//! A prompt is a point `(family, difficulty, features)` and owns a finite,
//! deterministic set of responses, each a feature vector `psi(x, y)` in the
//! solver's representable space. Rewards come from an exact oracle:
//!
//! ```text
//! u_x   = direction_f + tilt * features_x
//!         + depth_tilt * difficulty * depth_f       (L1-normalized)
//! s     = (1 - difficulty) * u_x . psi  -  difficulty * orthogonal_weight
//! r     = r_lo + (r_hi - r_lo) * clamp(1/2 + gain * (s + bias), 0, 1)
//! ```
//!
//! Difficulty moves weight from the in-span direction `u_x` onto an axis
//! every synthetic response shares, so easy prompts saturate near `r_hi`,
//! mid-range prompts spread across the full range, and hard prompts collapse
//! to `r_lo` for every response. Harder prompts also lean toward the
//! family's `depth_f`, so a solver trained only on easy prompts aims at the
//! wrong optimum on hard ones.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{EvaError, Result};
use crate::rng::{self, tag};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PromptId(pub u64);

impl std::fmt::Display for PromptId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvolveOp {
    InDepth,
    InBreadth,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Origin {
    Seed,
    Evolved {
        parent: PromptId,
        op: EvolveOp,
        generation: u32,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub id: PromptId,
    pub family: String,
    pub difficulty: f64,
    pub features: Vec<f64>,
    /// Seeds the prompt's response enumeration.
    pub salt: u64,
    pub origin: Origin,
}

impl Prompt {
    pub fn new(
        id: PromptId,
        family: impl Into<String>,
        difficulty: f64,
        features: Vec<f64>,
        salt: u64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&difficulty) {
            return Err(EvaError::invalid(format!(
                "difficulty {difficulty} outside [0, 1]"
            )));
        }
        if features.is_empty() || features.iter().any(|f| !f.is_finite()) {
            return Err(EvaError::invalid(
                "prompt features must be finite and non-empty",
            ));
        }
        Ok(Prompt {
            id,
            family: family.into(),
            difficulty,
            features,
            salt,
            origin: Origin::Seed,
        })
    }

    pub fn parent(&self) -> Option<PromptId> {
        match self.origin {
            Origin::Seed => None,
            Origin::Evolved { parent, .. } => Some(parent),
        }
    }

    pub fn generation(&self) -> u32 {
        match self.origin {
            Origin::Seed => 0,
            Origin::Evolved { generation, .. } => generation,
        }
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub prompt_id: PromptId,
    pub index: usize,
    pub features: Vec<f64>,
    /// Stand-in for the token length `|y|`.
    pub length_tokens: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResponseSet {
    pub prompt_id: PromptId,
    pub responses: Vec<Response>,
}

impl ResponseSet {
    /// Builds a set from explicit feature rows; lengths default to `1 + index`.
    pub fn from_features(prompt_id: PromptId, rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        if rows
            .iter()
            .any(|r| r.len() != dim || r.iter().any(|v| !v.is_finite()))
        {
            return Err(EvaError::invalid(
                "response features must share one finite dimension",
            ));
        }
        let responses = rows
            .into_iter()
            .enumerate()
            .map(|(index, features)| Response {
                prompt_id,
                index,
                features,
                length_tokens: 1 + index as u32,
            })
            .collect();
        Ok(ResponseSet {
            prompt_id,
            responses,
        })
    }

    /// One-hot features: the log-linear policy becomes a logit table.
    pub fn tabular(prompt_id: PromptId, m: usize) -> Self {
        let rows = (0..m)
            .map(|i| (0..m).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Self::from_features(prompt_id, rows).expect("one-hot rows are well formed")
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.responses
            .first()
            .map(|r| r.features.len())
            .unwrap_or(0)
    }

    pub fn get(&self, index: usize) -> Result<&Response> {
        self.responses.get(index).ok_or_else(|| {
            EvaError::invalid(format!(
                "response index {index} out of range for {} responses",
                self.len()
            ))
        })
    }
}

/// Deterministic response enumeration: response `i` depends only on the
/// prompt's salt and `i`, so a size-6 set is a prefix of the size-8 set.
pub fn enumerate_responses(prompt: &Prompt, m: usize) -> Result<ResponseSet> {
    if m < 2 {
        return Err(EvaError::invalid(format!(
            "need at least 2 responses, got {m}"
        )));
    }
    let dim = prompt.dim();
    let responses = (0..m)
        .map(|index| {
            let mut stream = rng::substream(prompt.salt, &[tag("response"), index as u64]);
            let features = (0..dim).map(|_| stream.random_range(-1.0..=1.0)).collect();
            Response {
                prompt_id: prompt.id,
                index,
                features,
                length_tokens: 1 + index as u32,
            }
        })
        .collect();
    Ok(ResponseSet {
        prompt_id: prompt.id,
        responses,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyParams {
    pub name: String,
    /// Base reward direction shared by every prompt of the family.
    pub direction: Vec<f64>,
    /// How far prompt features tilt the direction away from the base.
    pub tilt: f64,
    /// Direction that harder prompts of the family lean toward; empty for none.
    #[serde(default)]
    pub depth_direction: Vec<f64>,
    /// Weight of `depth_direction` per unit of difficulty.
    #[serde(default)]
    pub depth_tilt: f64,
    pub gain: f64,
    pub bias: f64,
    /// Weight on the axis outside the solver's span that difficulty grows.
    pub orthogonal_weight: f64,
    /// Difficulty prior `[lo, hi]` for freshly drawn prompts.
    pub prior_difficulty: [f64; 2],
    /// Relative frequency of the family under the prompt prior.
    pub prior_weight: f64,
}

impl FamilyParams {
    /// The default "margin-control" family. With gain 1, bias 1 and
    /// orthogonal weight 2, difficulty 0.5 spans the whole reward range,
    /// difficulty 0 saturates most responses at `r_hi`, and every response
    /// scores `r_lo` once difficulty reaches 5/6.
    pub fn margin_control() -> Self {
        FamilyParams {
            name: "margin_control".to_string(),
            direction: vec![1.0, -0.7, 0.5, 0.3],
            tilt: 0.25,
            depth_direction: vec![-0.5, 0.3, 1.0, -0.8],
            depth_tilt: 1.5,
            gain: 1.0,
            bias: 1.0,
            orthogonal_weight: 2.0,
            prior_difficulty: [0.0, 0.5],
            prior_weight: 1.0,
        }
    }

    fn validate(&self) -> Result<()> {
        let [lo, hi] = self.prior_difficulty;
        if self.direction.is_empty() || self.direction.iter().any(|v| !v.is_finite()) {
            return Err(EvaError::Config(format!(
                "family {}: bad direction",
                self.name
            )));
        }
        if !self.depth_direction.is_empty() && self.depth_direction.len() != self.direction.len() {
            return Err(EvaError::Config(format!(
                "family {}: depth_direction must be empty or match direction length",
                self.name
            )));
        }
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(EvaError::Config(format!(
                "family {}: prior difficulty [{lo}, {hi}] must lie in [0, 1]",
                self.name
            )));
        }
        if self.gain <= 0.0 || self.prior_weight < 0.0 {
            return Err(EvaError::Config(format!(
                "family {}: gain must be > 0 and prior weight >= 0",
                self.name
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardOracle {
    pub r_lo: f64,
    pub r_hi: f64,
    pub families: Vec<FamilyParams>,
}

impl Default for RewardOracle {
    fn default() -> Self {
        RewardOracle {
            r_lo: 0.0,
            r_hi: 1.0,
            families: vec![FamilyParams::margin_control()],
        }
    }
}

impl RewardOracle {
    pub fn validate(&self) -> Result<()> {
        if !(self.r_lo < self.r_hi) {
            return Err(EvaError::Config("reward range needs r_lo < r_hi".into()));
        }
        let first = self
            .families
            .first()
            .ok_or_else(|| EvaError::Config("at least one task family is required".into()))?;
        for family in &self.families {
            family.validate()?;
            if family.direction.len() != first.direction.len() {
                return Err(EvaError::Config(
                    "all families must share one feature dimension".into(),
                ));
            }
        }
        if self.families.iter().map(|f| f.prior_weight).sum::<f64>() <= 0.0 {
            return Err(EvaError::Config("family prior weights sum to zero".into()));
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.families
            .first()
            .map(|f| f.direction.len())
            .unwrap_or(0)
    }

    pub fn family(&self, name: &str) -> Result<&FamilyParams> {
        self.families
            .iter()
            .find(|f| f.name == name)
            .ok_or_else(|| EvaError::invalid(format!("unknown task family {name:?}")))
    }

    /// L1-normalized in-span reward direction for a prompt.
    pub fn reward_direction(&self, prompt: &Prompt) -> Result<Vec<f64>> {
        let family = self.family(&prompt.family)?;
        if family.direction.len() != prompt.dim() {
            return Err(EvaError::invalid(format!(
                "prompt {} has {} features, family {} expects {}",
                prompt.id,
                prompt.dim(),
                family.name,
                family.direction.len()
            )));
        }
        let mut raw: Vec<f64> = family
            .direction
            .iter()
            .zip(&prompt.features)
            .map(|(w, f)| w + family.tilt * f)
            .collect();
        for (r, v) in raw.iter_mut().zip(&family.depth_direction) {
            *r += family.depth_tilt * prompt.difficulty * v;
        }
        let norm: f64 = raw.iter().map(|v| v.abs()).sum();
        if norm == 0.0 {
            return Ok(raw);
        }
        Ok(raw.into_iter().map(|v| v / norm).collect())
    }

    fn squash(&self, family: &FamilyParams, difficulty: f64, in_span: f64) -> f64 {
        let score = (1.0 - difficulty) * in_span - difficulty * family.orthogonal_weight;
        let t = (0.5 + family.gain * (score + family.bias)).clamp(0.0, 1.0);
        self.r_lo + (self.r_hi - self.r_lo) * t
    }

    /// Reward of an arbitrary feature vector at a prompt.
    pub fn score_features(&self, prompt: &Prompt, features: &[f64]) -> Result<f64> {
        let family = self.family(&prompt.family)?;
        let direction = self.reward_direction(prompt)?;
        if features.len() != direction.len() {
            return Err(EvaError::invalid("response feature dimension mismatch"));
        }
        Ok(self.squash(family, prompt.difficulty, dot(&direction, features)))
    }

    pub fn reward(&self, prompt: &Prompt, response: &Response) -> Result<f64> {
        if response.prompt_id != prompt.id {
            return Err(EvaError::invalid(format!(
                "response belongs to prompt {}, not {}",
                response.prompt_id, prompt.id
            )));
        }
        self.score_features(prompt, &response.features)
    }

    pub fn rewards(&self, prompt: &Prompt, set: &ResponseSet) -> Result<Vec<f64>> {
        set.responses
            .iter()
            .map(|r| self.reward(prompt, r))
            .collect()
    }

    /// Corner of the response box that maximizes the in-span score.
    pub fn target_features(&self, prompt: &Prompt) -> Result<Vec<f64>> {
        Ok(self
            .reward_direction(prompt)?
            .into_iter()
            .map(|v| if v >= 0.0 { 1.0 } else { -1.0 })
            .collect())
    }

    /// Best-minus-worst in-span score gap over the feasible response box
    /// `[-1, 1]^d`, before squashing: `(r_hi - r_lo) * gain * (1 - difficulty) * 2`
    /// whenever the direction is non-zero. The box is used rather than the
    /// enumerated responses because the direction itself turns with
    /// difficulty.
    pub fn span_separation(&self, prompt: &Prompt) -> Result<f64> {
        let family = self.family(&prompt.family)?;
        let direction = self.reward_direction(prompt)?;
        let reach: f64 = direction.iter().map(|v| v.abs()).sum();
        Ok((self.r_hi - self.r_lo) * family.gain * (1.0 - prompt.difficulty) * 2.0 * reach)
    }

    /// Draws a fresh seed prompt from the family priors.
    pub fn sample_prompt<R: Rng + ?Sized>(&self, rng: &mut R) -> Prompt {
        let total: f64 = self.families.iter().map(|f| f.prior_weight).sum();
        let mut pick = rng.random::<f64>() * total;
        let mut family = &self.families[self.families.len() - 1];
        for f in &self.families {
            if pick < f.prior_weight {
                family = f;
                break;
            }
            pick -= f.prior_weight;
        }
        let [lo, hi] = family.prior_difficulty;
        let difficulty = lo + (hi - lo) * rng.random::<f64>();
        let features = (0..family.direction.len())
            .map(|_| rng.random_range(-1.0..=1.0))
            .collect();
        Prompt {
            id: PromptId(rng.random()),
            family: family.name.clone(),
            difficulty,
            features,
            salt: rng.random(),
            origin: Origin::Seed,
        }
    }

    pub fn sample_prompts<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Prompt> {
        (0..n).map(|_| self.sample_prompt(rng)).collect()
    }
}

/// Oracle plus the size of every prompt's enumerated response set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskSpace {
    pub responses_per_prompt: usize,
    #[serde(flatten)]
    pub oracle: RewardOracle,
}

impl Default for TaskSpace {
    fn default() -> Self {
        TaskSpace {
            responses_per_prompt: 8,
            oracle: RewardOracle::default(),
        }
    }
}

impl TaskSpace {
    pub fn validate(&self) -> Result<()> {
        if self.responses_per_prompt < 2 {
            return Err(EvaError::Config("responses_per_prompt must be >= 2".into()));
        }
        self.oracle.validate()
    }

    pub fn responses(&self, prompt: &Prompt) -> Result<ResponseSet> {
        enumerate_responses(prompt, self.responses_per_prompt)
    }

    /// Responses and their exact rewards.
    pub fn annotate(&self, prompt: &Prompt) -> Result<(ResponseSet, Vec<f64>)> {
        let set = self.responses(prompt)?;
        let rewards = self.oracle.rewards(prompt, &set)?;
        Ok((set, rewards))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvolveConfig {
    /// Probability that a child comes from in-depth rather than in-breadth evolution.
    pub depth_ratio: f64,
    /// Upper bound on the difficulty increment of one in-depth step.
    pub depth_step: f64,
    /// Std-dev of the feature jitter applied by in-depth evolution.
    pub depth_jitter: f64,
    /// Std-dev of the feature mutation applied by in-breadth evolution.
    pub breadth_sigma: f64,
}

impl Default for EvolveConfig {
    fn default() -> Self {
        EvolveConfig {
            depth_ratio: 0.5,
            depth_step: 0.15,
            depth_jitter: 0.02,
            breadth_sigma: 0.25,
        }
    }
}

fn reflect_unit(mut x: f64) -> f64 {
    while !(-1.0..=1.0).contains(&x) {
        x = if x > 1.0 { 2.0 - x } else { -2.0 - x };
    }
    x
}

fn child(
    parent: &Prompt,
    op: EvolveOp,
    difficulty: f64,
    features: Vec<f64>,
    rng: &mut impl Rng,
) -> Prompt {
    Prompt {
        id: PromptId(rng.random()),
        family: parent.family.clone(),
        difficulty,
        features,
        salt: rng.random(),
        origin: Origin::Evolved {
            parent: parent.id,
            op,
            generation: parent.generation() + 1,
        },
    }
}

fn jitter(features: &[f64], sigma: f64, rng: &mut impl Rng) -> Result<Vec<f64>> {
    if sigma == 0.0 {
        return Ok(features.to_vec());
    }
    let normal = Normal::new(0.0, sigma)
        .map_err(|e| EvaError::invalid(format!("bad jitter scale {sigma}: {e}")))?;
    Ok(features
        .iter()
        .map(|f| reflect_unit(f + normal.sample(rng)))
        .collect())
}

impl EvolveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.depth_ratio) {
            return Err(EvaError::Config("depth_ratio must lie in [0, 1]".into()));
        }
        if self.depth_step <= 0.0 || self.depth_jitter < 0.0 || self.breadth_sigma <= 0.0 {
            return Err(EvaError::Config(
                "depth_step and breadth_sigma must be > 0, depth_jitter >= 0".into(),
            ));
        }
        Ok(())
    }

    /// Raises difficulty by an increment drawn from `(0, depth_step]`,
    /// saturating at 1.
    pub fn in_depth(&self, prompt: &Prompt, rng: &mut impl Rng) -> Result<Prompt> {
        if self.depth_step <= 0.0 {
            return Err(EvaError::invalid("in-depth step must be > 0"));
        }
        let increment = self.depth_step * (1.0 - rng.random::<f64>());
        let difficulty = (prompt.difficulty + increment).min(1.0);
        let features = jitter(&prompt.features, self.depth_jitter, rng)?;
        Ok(child(prompt, EvolveOp::InDepth, difficulty, features, rng))
    }

    /// Mutates features inside the `[-1, 1]` box at unchanged difficulty.
    pub fn in_breadth(&self, prompt: &Prompt, rng: &mut impl Rng) -> Result<Prompt> {
        let features = jitter(&prompt.features, self.breadth_sigma, rng)?;
        Ok(child(
            prompt,
            EvolveOp::InBreadth,
            prompt.difficulty,
            features,
            rng,
        ))
    }

    pub fn evolve(
        &self,
        prompt: &Prompt,
        n_evolutions: usize,
        rng: &mut impl Rng,
    ) -> Result<Vec<Prompt>> {
        if n_evolutions < 1 {
            return Err(EvaError::invalid("n_evolutions must be >= 1"));
        }
        (0..n_evolutions)
            .map(|_| {
                if rng.random::<f64>() < self.depth_ratio {
                    self.in_depth(prompt, rng)
                } else {
                    self.in_breadth(prompt, rng)
                }
            })
            .collect()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
