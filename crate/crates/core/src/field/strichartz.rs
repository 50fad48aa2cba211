use num_rational::Ratio;

/// Lebesgue exponent in `[1, ∞]`, kept rational so admissibility is decided exactly.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Exponent {
    Finite(Ratio<i64>),
    Infinite,
}

impl Exponent {
    pub fn int(p: i64) -> Self {
        Exponent::Finite(Ratio::from_integer(p))
    }

    pub fn ratio(num: i64, den: i64) -> Self {
        Exponent::Finite(Ratio::new(num, den))
    }

    /// `1/p`, zero for `p = ∞`.
    pub fn reciprocal(&self) -> Ratio<i64> {
        match self {
            Exponent::Finite(p) => p.recip(),
            Exponent::Infinite => Ratio::from_integer(0),
        }
    }

    pub fn to_f64(&self) -> f64 {
        match self {
            Exponent::Finite(p) => *p.numer() as f64 / *p.denom() as f64,
            Exponent::Infinite => f64::INFINITY,
        }
    }

    fn at_least_two(&self) -> bool {
        match self {
            Exponent::Finite(p) => *p >= Ratio::from_integer(2),
            Exponent::Infinite => true,
        }
    }
}

/// `(p, q)` is a Strichartz pair in dimension `d`: `2/q = d(1/2 - 1/p)`,
/// `p, q ∈ [2, ∞]`, `(p, q, d) ≠ (∞, 2, 2)`.
pub fn strichartz_admissible(p: Exponent, q: Exponent, d: u32) -> bool {
    if !p.at_least_two() || !q.at_least_two() {
        return false;
    }
    if p == Exponent::Infinite && q == Exponent::int(2) && d == 2 {
        return false;
    }
    let half = Ratio::new(1, 2);
    let lhs = q.reciprocal() * 2;
    let rhs = (half - p.reciprocal()) * d as i64;
    lhs == rhs
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn admissibility() {
        assert!(strichartz_admissible(Exponent::int(2), Exponent::Infinite, 3));
        assert!(strichartz_admissible(Exponent::ratio(10, 3), Exponent::ratio(10, 3), 3));
        assert!(!strichartz_admissible(Exponent::int(4), Exponent::int(4), 3));
        assert!(!strichartz_admissible(Exponent::Infinite, Exponent::int(2), 2));
        // endpoint (6, 2) in d = 3
        assert!(strichartz_admissible(Exponent::int(6), Exponent::int(2), 3));
        assert!(!strichartz_admissible(Exponent::int(1), Exponent::Infinite, 3));
        // p₁ = 2 + 4/d for d = 1, 2
        assert!(strichartz_admissible(Exponent::int(6), Exponent::int(6), 1));
        assert!(strichartz_admissible(Exponent::int(4), Exponent::int(4), 2));
    }
}
