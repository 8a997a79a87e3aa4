//! Patience-based early stopping on a validation loss.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    /// New strict minimum; the caller should keep this step's model.
    Improved,
    Continue,
    /// `patience` consecutive steps without a new strict minimum.
    Stop,
}

#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Result<Self> {
        if patience == 0 {
            return Err(Error::config("patience", "must be at least 1"));
        }
        Ok(Self {
            patience,
            best: None,
            stale: 0,
        })
    }

    pub fn observe(&mut self, step: usize, loss: f64) -> Result<Verdict> {
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("validation loss {loss} at step {step}")));
        }
        match self.best {
            Some((_, best)) if loss >= best => {
                self.stale += 1;
                Ok(if self.stale >= self.patience {
                    Verdict::Stop
                } else {
                    Verdict::Continue
                })
            }
            _ => {
                self.best = Some((step, loss));
                self.stale = 0;
                Ok(Verdict::Improved)
            }
        }
    }

    /// Step and loss of the best observation so far.
    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}
