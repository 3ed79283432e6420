//! Bookkeeping for the unclassified / potential-maximizer set `M_t` and, for
//! level-set estimation, the super- and sub-level sets `H_t` and `L_t`.

use crate::gp::GpPosterior;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    /// In `M_t`.
    Unclassified,
    /// In `H_t` (believed above the threshold).
    Above,
    /// In `L_t` (believed below the threshold).
    Below,
    /// Ruled out as a maximizer.
    Discarded,
}

/// Partition of the domain into labelled points. `active` lists `M_t` in
/// increasing index order.
#[derive(Debug, Clone, PartialEq)]
pub struct SetState {
    labels: Vec<Label>,
    active: Vec<usize>,
}

/// Upper and lower confidence bounds `mu +/- beta^{1/2} sigma`.
pub fn confidence_bounds(posterior: &GpPosterior, beta: f64) -> (Vec<f64>, Vec<f64>) {
    let scale = beta.sqrt();
    let n = posterior.domain().len();
    let mut lower = Vec::with_capacity(n);
    let mut upper = Vec::with_capacity(n);
    for i in 0..n {
        let mu = posterior.mean(i);
        let w = scale * posterior.std_dev(i);
        lower.push(mu - w);
        upper.push(mu + w);
    }
    (lower, upper)
}

impl SetState {
    /// Everything unclassified.
    pub fn new(n: usize) -> Self {
        Self {
            labels: vec![Label::Unclassified; n],
            active: (0..n).collect(),
        }
    }

    pub fn from_labels(labels: Vec<Label>) -> Self {
        let active = labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == Label::Unclassified)
            .map(|(i, _)| i)
            .collect();
        Self { labels, active }
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> Label {
        self.labels[i]
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn is_resolved(&self) -> bool {
        self.active.is_empty()
    }

    /// Sizes of `(M_t, H_t, L_t)`.
    pub fn counts(&self) -> (usize, usize, usize) {
        let mut c = (0, 0, 0);
        for l in &self.labels {
            match l {
                Label::Unclassified => c.0 += 1,
                Label::Above => c.1 += 1,
                Label::Below => c.2 += 1,
                Label::Discarded => {}
            }
        }
        c
    }

    pub fn members(&self, label: Label) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == label)
            .map(|(i, _)| i)
            .collect()
    }

    /// Potential-maximizer update: keep `x` when `u(x) >= max ell` over the
    /// candidate set, which is `M_{t-1}` (monotone) or the whole domain.
    pub fn update_bo(&mut self, lower: &[f64], upper: &[f64], monotone: bool) {
        let candidates: Vec<usize> = if monotone {
            self.active.clone()
        } else {
            (0..self.labels.len()).collect()
        };
        let best_lower = candidates
            .iter()
            .map(|&i| lower[i])
            .fold(f64::NEG_INFINITY, f64::max);
        for &i in &candidates {
            self.labels[i] = if upper[i] >= best_lower {
                Label::Unclassified
            } else {
                Label::Discarded
            };
        }
        self.refresh_active();
    }

    /// Level-set update against threshold `h`. In monotone mode only points of
    /// `M_{t-1}` move and `H`, `L` only grow; otherwise every point is
    /// reclassified from the current bounds.
    pub fn update_lse(&mut self, lower: &[f64], upper: &[f64], threshold: f64, monotone: bool) {
        let n = self.labels.len();
        for i in 0..n {
            if monotone && self.labels[i] != Label::Unclassified {
                continue;
            }
            self.labels[i] = if lower[i] > threshold {
                Label::Above
            } else if upper[i] < threshold {
                Label::Below
            } else {
                Label::Unclassified
            };
        }
        self.refresh_active();
    }

    fn refresh_active(&mut self) {
        self.active.clear();
        self.active.extend(
            self.labels
                .iter()
                .enumerate()
                .filter(|(_, l)| **l == Label::Unclassified)
                .map(|(i, _)| i),
        );
    }
}
