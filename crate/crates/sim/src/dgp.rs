//! Data generating processes: the piecewise AR/ARX designs A-I, the
//! 13-regressor "empirical" design with a configurable number of breaking
//! coefficients, and the 100-regressor design J.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use selseg::{ActiveSet, Dataset, Error, Result, Segmentation};

pub const BURN_IN: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DgpName {
    A,
    B,
    C,
    D,
    E,
    F,
    G,
    H,
    I,
    /// Variant `i` in 1..=14: the first `i - 1` coefficients break.
    Empirical(usize),
    J,
}

impl std::str::FromStr for DgpName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let u = s.trim().to_ascii_uppercase();
        if let Some(rest) = u.strip_prefix("EMP") {
            let i: usize = rest.trim_start_matches(|c: char| !c.is_ascii_digit()).parse().map_err(|_| {
                Error::InvalidInput(format!("empirical variant needs a number in 1..=14, got '{s}'"))
            })?;
            if !(1..=14).contains(&i) {
                return Err(Error::InvalidInput(format!("empirical variant {i} outside 1..=14")));
            }
            return Ok(DgpName::Empirical(i));
        }
        Ok(match u.as_str() {
            "A" => DgpName::A,
            "B" => DgpName::B,
            "C" => DgpName::C,
            "D" => DgpName::D,
            "E" => DgpName::E,
            "F" => DgpName::F,
            "G" => DgpName::G,
            "H" => DgpName::H,
            "I" => DgpName::I,
            "J" => DgpName::J,
            _ => return Err(Error::InvalidInput(format!("unknown DGP '{s}'"))),
        })
    }
}

impl std::fmt::Display for DgpName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DgpName::Empirical(i) => write!(f, "EMP{i}"),
            other => write!(f, "{other:?}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variance {
    Constant,
    /// `s2_t = 0.05 w + 0.05 u_{t-1}^2 + 0.9 s2_{t-1}` with `s2_0 = w`.
    Garch,
}

/// Settings of the empirical design. Covariates are AR(1) stand-ins.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmpiricalParams {
    pub beta1: Vec<f64>,
    /// Break sizes in units of `3 * omega * sign(beta1)`. `None` uses the
    /// large-sample OLS standard errors under the stand-in covariates.
    pub omega: Option<Vec<f64>>,
    pub sigma2: f64,
    pub ar_coef: f64,
    pub n_obs: usize,
    /// Last observation of the first regime.
    pub break_at: usize,
}

impl Default for EmpiricalParams {
    fn default() -> Self {
        EmpiricalParams {
            beta1: vec![0.33, 0.27, 0.07, -0.86, -3.03, -0.01, 0.01, 0.00, 0.11, -0.00, 0.02, 1.07, -0.01],
            omega: None,
            sigma2: 1.7,
            ar_coef: 0.3,
            n_obs: 256,
            break_at: 132,
        }
    }
}

impl EmpiricalParams {
    pub fn omega(&self) -> Vec<f64> {
        if let Some(w) = &self.omega {
            return w.clone();
        }
        let t = self.n_obs as f64;
        let v_x = 1.0 / (1.0 - self.ar_coef * self.ar_coef);
        (0..self.beta1.len())
            .map(|j| {
                let v = if j == 0 { 1.0 } else { v_x };
                (self.sigma2 / (t * v)).sqrt()
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DgpSpec {
    pub name: DgpName,
    pub variance: Variance,
    pub seed: u64,
    /// Overrides the default sample size of A-I and J.
    pub n_obs: Option<usize>,
    pub empirical: EmpiricalParams,
}

impl DgpSpec {
    pub fn new(name: DgpName, variance: Variance, seed: u64) -> Self {
        DgpSpec { name, variance, seed, n_obs: None, empirical: EmpiricalParams::default() }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        DgpSpec { seed, ..self.clone() }
    }
}

/// True structure of a simulated series.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Truth {
    pub breaks: Vec<usize>,
    pub names: Vec<String>,
    /// `coefs[j][k]`: coefficient `k` in regime `j` (0-based).
    pub coefs: Vec<Vec<f64>>,
}

impl Truth {
    /// Number of regimes of each parameter (1 + number of changes).
    pub fn regime_counts(&self) -> Vec<usize> {
        let k = self.names.len();
        (0..k).map(|c| 1 + self.coefs.windows(2).filter(|w| w[0][c] != w[1][c]).count()).collect()
    }

    /// Active set of the true changes on the true segmentation.
    pub fn active(&self) -> ActiveSet {
        let k = self.names.len();
        let mut a = ActiveSet::empty(self.coefs.len(), k);
        for j in 1..self.coefs.len() {
            for c in 0..k {
                if self.coefs[j][c] != self.coefs[j - 1][c] {
                    a.set(j + 1, c, true);
                }
            }
        }
        a
    }

    pub fn segmentation(&self, n_obs: usize) -> Result<Segmentation> {
        Segmentation::new(n_obs, self.breaks.clone())
    }
}

#[derive(Debug, Clone)]
pub struct Simulated {
    pub data: Dataset,
    pub truth: Truth,
}

enum Reg {
    Int,
    Lag(usize),
    Exo(f64),
}

struct Table {
    breaks: Vec<usize>,
    regs: Vec<(&'static str, Reg, Vec<f64>)>,
}

fn table(name: DgpName) -> Table {
    use Reg::*;
    let (breaks, regs): (Vec<usize>, Vec<(&str, Reg, Vec<f64>)>) = match name {
        DgpName::A => (vec![], vec![("Intercept", Int, vec![0.0]), ("AR1", Lag(1), vec![-0.7])]),
        DgpName::B => (
            vec![512, 768],
            vec![
                ("Intercept", Int, vec![0.0; 3]),
                ("AR1", Lag(1), vec![0.9, 1.69, 1.32]),
                ("AR2", Lag(2), vec![0.0, -0.81, -0.81]),
            ],
        ),
        DgpName::C => (vec![400, 612], vec![("Intercept", Int, vec![0.0; 3]), ("AR1", Lag(1), vec![0.4, -0.6, 0.5])]),
        DgpName::D => (vec![50], vec![("Intercept", Int, vec![0.0; 2]), ("AR1", Lag(1), vec![0.75, -0.5])]),
        DgpName::E => (vec![], vec![("Intercept", Int, vec![0.0]), ("AR1", Lag(1), vec![0.999])]),
        DgpName::F => (
            vec![400, 750],
            vec![
                ("Intercept", Int, vec![0.0; 3]),
                ("AR1", Lag(1), vec![1.399, 0.999, 0.699]),
                ("AR2", Lag(2), vec![-0.4, 0.0, 0.3]),
            ],
        ),
        DgpName::G => (
            vec![400, 750],
            vec![
                ("Intercept", Int, vec![1.0, 0.0, 0.0]),
                ("V", Exo(3.0), vec![1.5, 0.9, 2.2]),
                ("W", Exo(4.0), vec![-0.6, -0.6, -1.0]),
            ],
        ),
        DgpName::H | DgpName::I => (
            if name == DgpName::H { vec![400, 750] } else { vec![512, 768] },
            vec![
                ("Intercept", Int, vec![0.0; 3]),
                ("AR1", Lag(1), vec![0.9, 1.69, 1.32]),
                ("AR2", Lag(2), vec![0.0, -0.81, -0.81]),
                ("V", Exo(3.0), vec![1.5, 0.9, 2.2]),
                ("W", Exo(4.0), vec![-0.6, -0.6, -1.0]),
            ],
        ),
        DgpName::Empirical(_) | DgpName::J => unreachable!(),
    };
    Table { breaks, regs }
}

fn regime_of(t: usize, breaks: &[usize]) -> usize {
    // t is a 1-based date
    breaks.iter().filter(|&&b| t > b).count()
}

struct Shocks {
    mode: Variance,
    wbar: f64,
    s2: f64,
    prev_u: f64,
}

impl Shocks {
    fn new(mode: Variance, wbar: f64) -> Self {
        Shocks { mode, wbar, s2: wbar, prev_u: 0.0 }
    }

    fn next<R: Rng>(&mut self, rng: &mut R, first: bool) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        let u = match self.mode {
            Variance::Constant => self.wbar.sqrt() * z,
            Variance::Garch => {
                if !first {
                    self.s2 = 0.05 * self.wbar + 0.05 * self.prev_u * self.prev_u + 0.9 * self.s2;
                }
                self.s2.sqrt() * z
            }
        };
        self.prev_u = u;
        u
    }
}

fn simulate_table(spec: &DgpSpec) -> Result<Simulated> {
    let tb = table(spec.name);
    let n = spec.n_obs.unwrap_or(1024);
    if tb.breaks.iter().any(|&b| b >= n) {
        return Err(Error::InvalidInput(format!("sample size {n} does not contain the breaks {:?}", tb.breaks)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let k = tb.regs.len();
    let total = BURN_IN + n;
    let mut shocks = Shocks::new(spec.variance, 1.0);
    let exo: Vec<Option<Normal<f64>>> =
        tb.regs.iter().map(|(_, r, _)| if let Reg::Exo(sd) = r { Some(Normal::new(0.0, *sd).unwrap()) } else { None }).collect();
    let mut y = vec![0.0; total];
    let mut x = DMatrix::zeros(total, k);
    for s in 0..total {
        // burn-in draws use the first regime
        let regime = if s < BURN_IN { 0 } else { regime_of(s - BURN_IN + 1, &tb.breaks) };
        let mut mean = 0.0;
        for (c, (_, reg, coefs)) in tb.regs.iter().enumerate() {
            let v = match reg {
                Reg::Int => 1.0,
                Reg::Lag(l) => {
                    if s >= *l {
                        y[s - l]
                    } else {
                        0.0
                    }
                }
                Reg::Exo(_) => exo[c].unwrap().sample(&mut rng),
            };
            x[(s, c)] = v;
            mean += coefs[regime] * v;
        }
        y[s] = mean + shocks.next(&mut rng, s == 0);
    }
    let names: Vec<String> = tb.regs.iter().map(|(n, _, _)| n.to_string()).collect();
    let m = tb.breaks.len() + 1;
    let coefs = (0..m).map(|j| tb.regs.iter().map(|(_, _, c)| c[j]).collect()).collect();
    let data = Dataset::new(y[BURN_IN..].to_vec(), x.rows(BURN_IN, n).into_owned(), names.clone())?;
    Ok(Simulated { data, truth: Truth { breaks: tb.breaks, names, coefs } })
}

fn simulate_empirical(spec: &DgpSpec, variant: usize) -> Result<Simulated> {
    let p = &spec.empirical;
    let k = p.beta1.len();
    if variant == 0 || variant > k + 1 {
        return Err(Error::InvalidInput(format!("empirical variant {variant} outside 1..={}", k + 1)));
    }
    let n = p.n_obs;
    if p.break_at == 0 || p.break_at >= n {
        return Err(Error::InvalidInput("empirical break date outside the sample".into()));
    }
    let omega = p.omega();
    if omega.len() != k {
        return Err(Error::InvalidInput("omega and beta1 lengths differ".into()));
    }
    let sign = |v: f64| if v < 0.0 { -1.0 } else { 1.0 };
    let beta2: Vec<f64> =
        (0..k).map(|j| if j + 1 < variant { p.beta1[j] + 3.0 * omega[j] * sign(p.beta1[j]) } else { p.beta1[j] }).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let total = BURN_IN + n;
    let mut x = DMatrix::zeros(total, k);
    let mut shocks = Shocks::new(spec.variance, p.sigma2);
    let mut y = vec![0.0; total];
    for s in 0..total {
        x[(s, 0)] = 1.0;
        for c in 1..k {
            let prev = if s > 0 { x[(s - 1, c)] } else { 0.0 };
            x[(s, c)] = p.ar_coef * prev + rng.sample::<f64, _>(StandardNormal);
        }
        let date = s as i64 - BURN_IN as i64 + 1;
        let b = if date > p.break_at as i64 { &beta2 } else { &p.beta1 };
        let mean: f64 = (0..k).map(|c| b[c] * x[(s, c)]).sum();
        y[s] = mean + shocks.next(&mut rng, s == 0);
    }
    let names: Vec<String> = std::iter::once("Intercept".to_string()).chain((1..k).map(|i| format!("x{i}"))).collect();
    let data = Dataset::new(y[BURN_IN..].to_vec(), x.rows(BURN_IN, n).into_owned(), names.clone())?;
    Ok(Simulated { data, truth: Truth { breaks: vec![p.break_at], names, coefs: vec![p.beta1.clone(), beta2] } })
}

fn simulate_j(spec: &DgpSpec) -> Result<Simulated> {
    let n = spec.n_obs.unwrap_or(1024);
    let (k, tau, n_flip) = (100, 499, 10);
    if n <= tau + k {
        return Err(Error::InvalidInput(format!("design J needs more than {} observations", tau + k)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let beta1: Vec<f64> = (0..k).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
    let mut beta2 = beta1.clone();
    for i in sample(&mut rng, k, n_flip) {
        beta2[i] = -beta1[i];
    }
    let x = DMatrix::from_fn(n, k, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut shocks = Shocks::new(spec.variance, 1.0);
    let y: Vec<f64> = (0..n)
        .map(|i| {
            let b = if i + 1 > tau { &beta2 } else { &beta1 };
            (0..k).map(|c| b[c] * x[(i, c)]).sum::<f64>() + shocks.next(&mut rng, i == 0)
        })
        .collect();
    let names: Vec<String> = (1..=k).map(|i| format!("x{i}")).collect();
    let data = Dataset::new(y, x, names.clone())?;
    Ok(Simulated { data, truth: Truth { breaks: vec![tau], names, coefs: vec![beta1, beta2] } })
}

/// Draws one series with its true structure.
pub fn simulate(spec: &DgpSpec) -> Result<Simulated> {
    match spec.name {
        DgpName::Empirical(i) => simulate_empirical(spec, i),
        DgpName::J => simulate_j(spec),
        _ => simulate_table(spec),
    }
}
