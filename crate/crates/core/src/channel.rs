//! Simulated physical channel: `y = h·x + n` with AWGN or Rayleigh block
//! fading (one gain per frame row), plus perfect-CSI zero-forcing.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum ChannelKind {
    Awgn,
    Rayleigh,
}

impl ChannelKind {
    pub fn name(self) -> &'static str {
        match self {
            ChannelKind::Awgn => "awgn",
            ChannelKind::Rayleigh => "rayleigh",
        }
    }
}

impl std::str::FromStr for ChannelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "awgn" => Ok(ChannelKind::Awgn),
            "rayleigh" => Ok(ChannelKind::Rayleigh),
            other => Err(Error::Config(format!("unknown channel kind {other:?}"))),
        }
    }
}

/// Complex channel symbols for a batch: row `b` holds `tokens × per_token`
/// symbols. `active` marks which tokens carry signal (false for padding).
#[derive(Clone, Debug, PartialEq)]
pub struct SymbolFrame {
    pub symbols: Vec<Complex64>,
    pub batch: usize,
    pub tokens: usize,
    pub per_token: usize,
    pub active: Vec<bool>,
}

impl SymbolFrame {
    /// A single row of symbols with no padding.
    pub fn single(symbols: Vec<Complex64>) -> Self {
        let n = symbols.len();
        SymbolFrame {
            symbols,
            batch: 1,
            tokens: n,
            per_token: 1,
            active: vec![true; n],
        }
    }

    pub fn row_len(&self) -> usize {
        self.tokens * self.per_token
    }

    fn check(&self) -> Result<()> {
        if self.symbols.len() != self.batch * self.row_len() || self.active.len() != self.batch * self.tokens {
            return Err(Error::Framing(format!(
                "frame of {} symbols does not match layout {}×{}×{}",
                self.symbols.len(),
                self.batch,
                self.tokens,
                self.per_token
            )));
        }
        Ok(())
    }

    /// Mean `|x|²` over active symbols.
    pub fn mean_power(&self) -> f64 {
        let (mut e, mut n) = (0.0, 0usize);
        for (i, s) in self.symbols.iter().enumerate() {
            if self.active[i / self.per_token] {
                e += s.norm_sqr();
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            e / n as f64
        }
    }

    /// From a `[B, L, 2·M]` tensor of interleaved real/imag parts (even index
    /// is the real part).
    pub fn from_interleaved(t: &Tensor, active: Vec<bool>) -> Result<Self> {
        let s = t.shape();
        if s.len() != 3 || !s[2].is_multiple_of(2) {
            return Err(Error::Framing(format!("expected [B, L, 2M] reals, got {s:?}")));
        }
        let symbols = t
            .data()
            .chunks_exact(2)
            .map(|p| Complex64::new(p[0], p[1]))
            .collect();
        let frame = SymbolFrame {
            symbols,
            batch: s[0],
            tokens: s[1],
            per_token: s[2] / 2,
            active,
        };
        frame.check()?;
        Ok(frame)
    }

    pub fn to_interleaved(&self) -> Result<Tensor> {
        self.check()?;
        let data = self.symbols.iter().flat_map(|c| [c.re, c.im]).collect();
        Tensor::new(vec![self.batch, self.tokens, 2 * self.per_token], data)
    }
}

/// One draw of the channel state: kind, SNR, per-row gains and the seed
/// that fixes the noise stream.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelRealization {
    pub kind: ChannelKind,
    /// `f64::INFINITY` disables noise.
    pub snr_db: f64,
    pub gains: Vec<Complex64>,
    pub seed: u64,
}

fn complex_normal(rng: &mut impl Rng, var: f64) -> Complex64 {
    let s = (var / 2.0).sqrt();
    Complex64::new(
        s * rng.sample::<f64, _>(StandardNormal),
        s * rng.sample::<f64, _>(StandardNormal),
    )
}

impl ChannelRealization {
    /// Draws `blocks` gains: 1 for AWGN, `CN(0, 1)` for Rayleigh (an exact
    /// zero is redrawn).
    pub fn draw(kind: ChannelKind, snr_db: f64, blocks: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gains = (0..blocks)
            .map(|_| match kind {
                ChannelKind::Awgn => Complex64::new(1.0, 0.0),
                ChannelKind::Rayleigh => loop {
                    let h = complex_normal(&mut rng, 1.0);
                    if h.norm_sqr() > 0.0 {
                        break h;
                    }
                },
            })
            .collect();
        ChannelRealization {
            kind,
            snr_db,
            gains,
            seed,
        }
    }

    /// Complex noise variance for unit signal power: `10^(−snr/10)`.
    pub fn noise_var(&self) -> f64 {
        if self.snr_db.is_infinite() && self.snr_db > 0.0 {
            0.0
        } else {
            10f64.powf(-self.snr_db / 10.0)
        }
    }

    /// Noise variance seen after zero-forcing row `b`: `σ²/|h_b|²`.
    pub fn equalized_noise_var(&self, b: usize) -> f64 {
        self.noise_var() / self.gains[b].norm_sqr()
    }

    fn noise_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(1);
        rng
    }

    /// `y = h·x + n`, `n ~ CN(0, σ²I)`.
    pub fn transmit(&self, x: &SymbolFrame) -> Result<SymbolFrame> {
        x.check()?;
        if self.gains.len() != x.batch {
            return Err(Error::Framing(format!(
                "{} channel gains for a batch of {}",
                self.gains.len(),
                x.batch
            )));
        }
        let var = self.noise_var();
        let mut rng = self.noise_rng();
        let row = x.row_len();
        let symbols = x
            .symbols
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let y = self.gains[i / row] * s;
                if var > 0.0 {
                    y + complex_normal(&mut rng, var)
                } else {
                    y
                }
            })
            .collect();
        Ok(SymbolFrame {
            symbols,
            ..x.clone()
        })
    }

    /// Zero-forcing with perfect CSI: `y / h` per row; AWGN passes through.
    pub fn equalize(&self, y: &SymbolFrame) -> Result<SymbolFrame> {
        y.check()?;
        if self.kind == ChannelKind::Awgn {
            return Ok(y.clone());
        }
        if let Some(h) = self.gains.iter().find(|h| h.norm() < 1e-12) {
            return Err(Error::DegenerateChannel(h.norm()));
        }
        let row = y.row_len();
        let symbols = y
            .symbols
            .iter()
            .enumerate()
            .map(|(i, &s)| s / self.gains[i / row])
            .collect();
        Ok(SymbolFrame {
            symbols,
            ..y.clone()
        })
    }

    /// Training-mode channel on `[B, L, 2M]` interleaved symbols: the forward
    /// value is `equalize(transmit(x))`, the backward pass treats the noise
    /// as a constant so the Jacobian w.r.t. `x` is the identity.
    pub fn straight_through<'t>(&self, x: Var<'t>, active: &[bool]) -> Result<Var<'t>> {
        let frame = SymbolFrame::from_interleaved(&x.value(), active.to_vec())?;
        let y = self.equalize(&self.transmit(&frame)?)?;
        x.straight_through(y.to_interleaved()?)
    }
}
