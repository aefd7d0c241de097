use serde::{Deserialize, Serialize};

use super::kmeans::sq_dist;
use super::vqae::VqAe;
use crate::error::{Error, Result};
use crate::ndnet::Matrix;
use crate::scalar::{lit, Scalar};

/// `U_k = {x : |E(x) - v_k| <= (1 + epsilon) d_m(x)}` with `d_m` the m-th smallest distance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MembershipRule {
    pub m: usize,
    pub epsilon: f64,
}

impl Default for MembershipRule {
    fn default() -> Self {
        Self { m: 1, epsilon: 0.0 }
    }
}

impl MembershipRule {
    /// Single nearest chart: the atlas is a partition.
    pub fn is_hard(&self) -> bool {
        self.m == 1 && self.epsilon == 0.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Membership<T> {
    /// Member chart ids, ascending.
    pub ids: Vec<usize>,
    /// Encoder distance to each member's center, aligned with `ids`.
    pub distances: Vec<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", bound = "T: Scalar")]
pub enum Partitioner<T> {
    Vqae { model: VqAe<T> },
    /// Centers live in the ambient space; the encoder is the identity.
    Kmeans,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ChartAtlas<T> {
    partitioner: Partitioner<T>,
    codebook: Matrix<T>,
    rule: MembershipRule,
    priors: Vec<T>,
}

impl<T: Scalar> ChartAtlas<T> {
    pub fn from_vqae(model: VqAe<T>, rule: MembershipRule) -> Result<Self> {
        let codebook = model.codebook();
        Self::build(Partitioner::Vqae { model }, codebook, rule)
    }

    pub fn from_centers(centers: Matrix<T>, rule: MembershipRule) -> Result<Self> {
        Self::build(Partitioner::Kmeans, centers, rule)
    }

    fn build(partitioner: Partitioner<T>, codebook: Matrix<T>, rule: MembershipRule) -> Result<Self> {
        let k = codebook.rows();
        if k == 0 {
            return Err(Error::InvalidConfig("atlas needs at least one chart".into()));
        }
        if !codebook.is_finite() {
            return Err(Error::NonFinite("codebook".into()));
        }
        let uniform = T::one() / lit::<T>(k as f64);
        let atlas = Self { partitioner, codebook, rule, priors: vec![uniform; k] };
        atlas.check_rule(rule)?;
        Ok(atlas)
    }

    fn check_rule(&self, rule: MembershipRule) -> Result<()> {
        if rule.m == 0 || rule.m > self.num_charts() || !(rule.epsilon >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "membership needs 1 <= m <= K={} and epsilon >= 0, got m={}, epsilon={}",
                self.num_charts(),
                rule.m,
                rule.epsilon
            )));
        }
        Ok(())
    }

    pub fn num_charts(&self) -> usize {
        self.codebook.rows()
    }

    /// Dimension of the code space (the flow's conditioning width).
    pub fn code_dim(&self) -> usize {
        self.codebook.cols()
    }

    pub fn codebook(&self) -> &Matrix<T> {
        &self.codebook
    }

    pub fn partitioner(&self) -> &Partitioner<T> {
        &self.partitioner
    }

    pub fn rule(&self) -> MembershipRule {
        self.rule
    }

    pub fn set_rule(&mut self, rule: MembershipRule) -> Result<()> {
        self.check_rule(rule)?;
        self.rule = rule;
        Ok(())
    }

    pub fn priors(&self) -> &[T] {
        &self.priors
    }

    pub fn set_priors(&mut self, p: Vec<T>) -> Result<()> {
        if p.len() != self.num_charts() {
            return Err(Error::Dimension(format!("{} priors for {} charts", p.len(), self.num_charts())));
        }
        let sum: T = p.iter().copied().sum();
        if p.iter().any(|&v| !(v >= T::zero())) || (sum - T::one()).abs() > lit(1e-9) {
            return Err(Error::InvalidConfig("chart priors must lie on the simplex".into()));
        }
        self.priors = p;
        Ok(())
    }

    /// `E(x)` for every row.
    pub fn encode(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        match &self.partitioner {
            Partitioner::Vqae { model } => model.encode(x),
            Partitioner::Kmeans => {
                if x.cols() != self.code_dim() {
                    return Err(Error::Dimension(format!("{} columns for {}-dim centers", x.cols(), self.code_dim())));
                }
                Ok(x.clone())
            }
        }
    }

    fn distances(&self, e: &[T]) -> Vec<T> {
        self.codebook.row_iter().map(|c| sq_dist(c, e).sqrt()).collect()
    }

    /// Nearest center; ties go to the lowest index.
    pub fn nearest_chart(&self, e: &[T]) -> usize {
        let d = self.distances(e);
        let mut best = 0;
        for k in 1..d.len() {
            if d[k] < d[best] {
                best = k;
            }
        }
        best
    }

    /// Member charts of an encoded point.
    pub fn membership_of_code(&self, e: &[T]) -> Membership<T> {
        let d = self.distances(e);
        if self.rule.is_hard() {
            let k = self.nearest_chart(e);
            return Membership { ids: vec![k], distances: vec![d[k]] };
        }
        let mut sorted = d.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        let threshold = sorted[self.rule.m - 1] * lit::<T>(1.0 + self.rule.epsilon);
        let ids: Vec<usize> = (0..d.len()).filter(|&k| d[k] <= threshold).collect();
        let distances = ids.iter().map(|&k| d[k]).collect();
        Membership { ids, distances }
    }

    pub fn memberships(&self, x: &Matrix<T>) -> Result<Vec<Membership<T>>> {
        let e = self.encode(x)?;
        Ok(e.row_iter().map(|r| self.membership_of_code(r)).collect())
    }

    /// Nearest chart of every row of `x`.
    pub fn hard_charts(&self, x: &Matrix<T>) -> Result<Vec<usize>> {
        let e = self.encode(x)?;
        Ok(e.row_iter().map(|r| self.nearest_chart(r)).collect())
    }

    /// Streaming estimate `r_k` of the membership frequency of each chart over
    /// `x`, normalised into the stored priors `p_k`.
    pub fn estimate_priors(&mut self, x: &Matrix<T>) -> Result<&[T]> {
        let members = self.memberships(x)?;
        let p = priors_from_memberships(&members, self.num_charts())?;
        self.priors = p;
        Ok(&self.priors)
    }
}

/// `r_k^(n) = (n-1)/n r_k^(n-1) + 1/n 1[x_n in U_k]`, then `p = r / sum(r)`.
pub fn priors_from_memberships<T: Scalar>(members: &[Membership<T>], k: usize) -> Result<Vec<T>> {
    let mut r = vec![T::zero(); k];
    let mut hit = vec![false; k];
    for (i, m) in members.iter().enumerate() {
        let n = lit::<T>((i + 1) as f64);
        let keep = (n - T::one()) / n;
        hit.iter_mut().for_each(|h| *h = false);
        for &id in &m.ids {
            hit[id] = true;
        }
        for (rk, &h) in r.iter_mut().zip(&hit) {
            *rk = keep * *rk + if h { T::one() / n } else { T::zero() };
        }
    }
    let total: T = r.iter().copied().sum();
    if !(total > T::zero()) {
        return Err(Error::Precondition("no point belongs to any chart".into()));
    }
    Ok(r.into_iter().map(|v| v / total).collect())
}
