//! Lossy radio link between a gateway and a node in contact.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkParams {
    /// Nominal loss-free page rate.
    pub page_rate: f64,
    /// Allowed range for `page_rate`.
    pub page_rate_range: (f64, f64),
    /// Probability that one chunk exchange is lost.
    pub chunk_loss: f64,
    /// Attempts per chunk before the contact is declared lost.
    pub attempts: u32,
}

impl Default for LinkParams {
    fn default() -> Self {
        Self {
            page_rate: 5.0,
            page_rate_range: (4.0, 6.0),
            chunk_loss: 0.0,
            attempts: 3,
        }
    }
}

impl LinkParams {
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        let (lo, hi) = self.page_rate_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(("page_rate_range", format!("bad range [{lo}, {hi}]")));
        }
        if !(lo..=hi).contains(&self.page_rate) {
            return Err(("page_rate", format!("{} outside [{lo}, {hi}]", self.page_rate)));
        }
        if !(0.0..=1.0).contains(&self.chunk_loss) {
            return Err(("chunk_loss", format!("probability {} outside [0, 1]", self.chunk_loss)));
        }
        if self.attempts == 0 {
            return Err(("attempts", "at least one attempt is needed".into()));
        }
        Ok(())
    }

    /// Airtime of one chunk exchange.
    pub fn packet_airtime_s(&self, chunks_per_page: u32) -> f64 {
        1.0 / (self.page_rate * chunks_per_page as f64)
    }

    /// Expected attempts per chunk given the retry budget.
    pub fn expected_attempts(&self) -> f64 {
        (0..self.attempts).map(|i| self.chunk_loss.powi(i as i32)).sum()
    }

    /// Expected page rate once retries are paid for, ignoring contact loss.
    pub fn effective_rate(&self) -> f64 {
        self.page_rate / self.expected_attempts()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transfer {
    pub pages: u64,
    pub contact_lost: bool,
    pub elapsed_s: f64,
}

/// Transfers up to `plan_pages` pages within `window_s` seconds. Each chunk
/// attempt costs one packet airtime and fails with the chunk loss
/// probability; a chunk that fails every attempt ends the contact.
pub fn link_transfer<R: Rng>(
    rng: &mut R,
    link: &LinkParams,
    chunks_per_page: u32,
    plan_pages: u64,
    window_s: f64,
) -> Transfer {
    let airtime = link.packet_airtime_s(chunks_per_page);
    let mut elapsed = 0.0;
    let mut pages = 0;
    while pages < plan_pages {
        for _ in 0..chunks_per_page {
            let mut ok = false;
            for _ in 0..link.attempts {
                if elapsed + airtime > window_s + 1e-9 {
                    return Transfer {
                        pages,
                        contact_lost: true,
                        elapsed_s: elapsed,
                    };
                }
                elapsed += airtime;
                if link.chunk_loss == 0.0 || rng.random::<f64>() >= link.chunk_loss {
                    ok = true;
                    break;
                }
            }
            if !ok {
                return Transfer {
                    pages,
                    contact_lost: true,
                    elapsed_s: elapsed,
                };
            }
        }
        pages += 1;
    }
    Transfer {
        pages,
        contact_lost: false,
        elapsed_s: elapsed,
    }
}
