//! Cohort predicates over the course user table.
//!
//! Text form, clauses joined by `&`:
//! `all`, `certified`, `uncertified`, `grade>=0.5`, `grade<0.2`,
//! `user_type=student`, `country=US`, `country=US|FR`.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::CapabilityError;
use crate::schema::{CourseStore, CourseUser, Id, Table};

/// Fields that live only in the PII table; no predicate may name them.
pub const PII_FIELDS: [&str; 5] = ["age", "ip", "most_frequent_ip", "user_pii", "pii_country"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CohortPredicate {
    All,
    Certified(bool),
    GradeAtLeast(f64),
    GradeBelow(f64),
    UserType(String),
    Country(BTreeSet<String>),
    And(Vec<CohortPredicate>),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CohortError {
    #[error("cohort predicates may not reference PII (`{0}`)")]
    PiiField(String),
    #[error("cannot parse cohort clause `{0}`")]
    Syntax(String),
}

impl CohortPredicate {
    pub fn matches(&self, u: &CourseUser) -> bool {
        match self {
            CohortPredicate::All => true,
            CohortPredicate::Certified(c) => u.certified == *c,
            CohortPredicate::GradeAtLeast(x) => u.final_grade >= *x,
            CohortPredicate::GradeBelow(x) => u.final_grade < *x,
            CohortPredicate::UserType(t) => &u.user_type == t,
            CohortPredicate::Country(cs) => cs.contains(&u.country),
            CohortPredicate::And(ps) => ps.iter().all(|p| p.matches(u)),
        }
    }

    fn parse_clause(c: &str) -> Result<CohortPredicate, CohortError> {
        let c = c.trim();
        let syntax = || CohortError::Syntax(c.to_string());
        let field: String = c
            .chars()
            .take_while(|ch| ch.is_ascii_alphanumeric() || *ch == '_')
            .collect::<String>()
            .to_ascii_lowercase();
        if PII_FIELDS.contains(&field.as_str()) {
            return Err(CohortError::PiiField(field));
        }
        let rest = c[field.len()..].trim();
        let number = |s: &str| s.trim().parse::<f64>().map_err(|_| syntax());
        match (field.as_str(), rest) {
            ("all", "") => Ok(CohortPredicate::All),
            ("certified", "") => Ok(CohortPredicate::Certified(true)),
            ("uncertified", "") => Ok(CohortPredicate::Certified(false)),
            ("grade" | "final_grade", r) if r.starts_with(">=") => Ok(CohortPredicate::GradeAtLeast(number(&r[2..])?)),
            ("grade" | "final_grade", r) if r.starts_with('<') => Ok(CohortPredicate::GradeBelow(number(&r[1..])?)),
            ("user_type", r) if r.starts_with('=') => Ok(CohortPredicate::UserType(r[1..].trim().to_string())),
            ("country", r) if r.starts_with('=') => Ok(CohortPredicate::Country(
                r[1..].split('|').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect(),
            )),
            _ => Err(syntax()),
        }
    }
}

impl FromStr for CohortPredicate {
    type Err = CohortError;
    fn from_str(s: &str) -> Result<Self, CohortError> {
        let clauses: Vec<CohortPredicate> = s
            .split('&')
            .filter(|c| !c.trim().is_empty())
            .map(CohortPredicate::parse_clause)
            .collect::<Result<_, _>>()?;
        Ok(match clauses.len() {
            0 => CohortPredicate::All,
            1 => clauses.into_iter().next().expect("one clause"),
            _ => CohortPredicate::And(clauses),
        })
    }
}

impl fmt::Display for CohortPredicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CohortPredicate::All => f.write_str("all"),
            CohortPredicate::Certified(true) => f.write_str("certified"),
            CohortPredicate::Certified(false) => f.write_str("uncertified"),
            CohortPredicate::GradeAtLeast(x) => write!(f, "grade>={x}"),
            CohortPredicate::GradeBelow(x) => write!(f, "grade<{x}"),
            CohortPredicate::UserType(t) => write!(f, "user_type={t}"),
            CohortPredicate::Country(cs) => {
                write!(f, "country={}", cs.iter().cloned().collect::<Vec<_>>().join("|"))
            }
            CohortPredicate::And(ps) => {
                let parts: Vec<String> = ps.iter().map(|p| p.to_string()).collect();
                f.write_str(&parts.join("&"))
            }
        }
    }
}

/// Course user ids satisfying `pred`.
pub fn select_cohort(store: &CourseStore, pred: &CohortPredicate) -> Result<BTreeSet<Id>, CapabilityError> {
    if !store.has(Table::CourseUser) {
        return Err(CapabilityError::new("cohort", Table::CourseUser));
    }
    Ok(store
        .course_users
        .iter()
        .filter(|u| pred.matches(u))
        .map(|u| u.course_user_id)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_round_trip() {
        for s in ["all", "certified", "grade>=0.5&user_type=student", "country=FR|US"] {
            let p: CohortPredicate = s.parse().unwrap();
            assert_eq!(p.to_string(), s);
        }
        assert_eq!("age>=30".parse::<CohortPredicate>(), Err(CohortError::PiiField("age".into())));
        assert!("grade~1".parse::<CohortPredicate>().is_err());
    }

    #[test]
    fn empty_store_gives_empty_cohort() {
        let s = CourseStore::new("c");
        assert!(select_cohort(&s, &CohortPredicate::All).unwrap().is_empty());
    }
}
