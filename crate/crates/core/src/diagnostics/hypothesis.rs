use serde::{Deserialize, Serialize};

/// Index set of the existence and uniqueness hypotheses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HypothesisParams {
    pub d: usize,
    pub gamma: f64,
    pub m: f64,
    pub m0: f64,
    pub p_star: f64,
    pub p0_star: f64,
    pub rho: f64,
    pub l: f64,
    pub delta0: f64,
}

impl HypothesisParams {
    /// A parameter set satisfying every clause in dimension one.
    pub fn feasible_d1() -> Self {
        Self {
            d: 1,
            gamma: 3.0,
            m: 6.0,
            m0: 12.0,
            p_star: 8.0,
            p0_star: 8.0,
            rho: 0.4,
            l: 12.0,
            delta0: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ClauseGroup {
    Existence,
    Uniqueness,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Clause {
    pub name: &'static str,
    pub group: ClauseGroup,
    pub holds: bool,
    /// Signed margin, positive (or zero for non-strict clauses) when the
    /// clause holds.
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesisReport {
    pub params: HypothesisParams,
    pub clauses: Vec<Clause>,
}

impl HypothesisReport {
    pub fn existence_ok(&self) -> bool {
        self.group_ok(ClauseGroup::Existence)
    }

    pub fn uniqueness_ok(&self) -> bool {
        self.existence_ok() && self.group_ok(ClauseGroup::Uniqueness)
    }

    fn group_ok(&self, group: ClauseGroup) -> bool {
        self.clauses
            .iter()
            .filter(|c| c.group == group)
            .all(|c| c.holds)
    }

    pub fn failed(&self) -> Vec<&'static str> {
        self.clauses
            .iter()
            .filter(|c| !c.holds)
            .map(|c| c.name)
            .collect()
    }

    pub fn clause(&self, name: &str) -> Option<&Clause> {
        self.clauses.iter().find(|c| c.name == name)
    }

    /// `key: value` lines, one per clause.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for c in &self.clauses {
            s.push_str(&format!(
                "{}: {} (slack {:.6e}, {})\n",
                c.name,
                if c.holds { "pass" } else { "fail" },
                c.slack,
                match c.group {
                    ClauseGroup::Existence => "existence",
                    ClauseGroup::Uniqueness => "uniqueness",
                }
            ));
        }
        s.push_str(&format!("existence: {}\n", self.existence_ok()));
        s.push_str(&format!("uniqueness: {}\n", self.uniqueness_ok()));
        s
    }
}

fn strict(name: &'static str, group: ClauseGroup, slack: f64) -> Clause {
    Clause {
        name,
        group,
        holds: slack > 0.0,
        slack,
    }
}

fn weak(name: &'static str, group: ClauseGroup, slack: f64) -> Clause {
    Clause {
        name,
        group,
        holds: slack >= 0.0,
        slack,
    }
}

/// Evaluates every clause literally. Never fails; NaN inputs fail the
/// clauses they enter.
pub fn validate_hypotheses(p: &HypothesisParams) -> HypothesisReport {
    use ClauseGroup::{Existence as E, Uniqueness as U};
    let d = p.d as f64;
    let gap = 1.0 - d / 2.0 - p.rho;
    let clauses = vec![
        weak(
            "dimension",
            E,
            if (1..=3).contains(&p.d) { 0.0 } else { -1.0 },
        ),
        strict("gamma_gt_2", E, p.gamma - 2.0),
        strict("m_gt_2", E, p.m - 2.0),
        strict("m0_lower", E, p.m0 - 2.0 * (p.gamma + 1.0) / p.gamma),
        weak("rho_embedding", E, 2.0 / p.m + d / p.m0 - (d / 2.0 - p.rho)),
        strict("rho_upper", E, gap),
        weak("p_star_ge_2", E, p.p_star - 2.0),
        weak("p0_star_ge_2", E, p.p0_star - 2.0),
        strict("p_star_m", E, 1.0 - 1.0 / p.p_star - 2.0 / p.m),
        strict(
            "p0_star_m0",
            E,
            p.gamma / (p.gamma + 1.0) - 2.0 / p.m0 - 1.0 / p.p0_star,
        ),
        strict("l_lower", E, p.l - (1.0 + 1.0 / gap)),
        strict("delta0_m0", E, 1.0 / p.m0 - p.delta0),
        strict("delta0_positive", U, p.delta0),
        strict("delta0_gamma", U, 1.0 / p.gamma - p.delta0),
        weak("rho_lower", U, p.rho - (d / 2.0 - 0.5)),
        // ρ ≥ d/2 − 1/2 and ρ < 1 − d/2 leave room only when d < 3/2
        strict("dimension_uniqueness", U, 1.5 - d),
    ];
    HypothesisReport {
        params: *p,
        clauses,
    }
}
