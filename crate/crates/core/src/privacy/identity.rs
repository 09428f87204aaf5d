//! Layered pseudonymous identifiers: PII → global → course → per-mode.
//!
//! Every identifier is a keyed PRF (HMAC-SHA256) of the raw handle, so the
//! ledger can be recomputed from the key alone and the PII table can live
//! elsewhere. The top bits of each id carry its namespace tag, which keeps the
//! six namespaces disjoint by construction.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;

use crate::schema::Id;

type HmacSha256 = Hmac<Sha256>;

pub const KEY_ENV: &str = "MOOCDB_SECRET_KEY";
pub const KEY_FILE_ENV: &str = "MOOCDB_KEY_FILE";
pub const MIN_KEY_BYTES: usize = 16;

const TAG_SHIFT: u32 = 58;
const BODY_MASK: u64 = (1 << TAG_SHIFT) - 1;

#[derive(Debug, thiserror::Error)]
pub enum IdentityError {
    #[error("secret key has {0} bytes; at least 16 (128 bits) are required")]
    KeyTooShort(usize),
    #[error("secret key is not valid hex")]
    KeyNotHex,
    #[error("no key material: set {KEY_ENV} (hex) or {KEY_FILE_ENV}, or name a key_file in the config")]
    NoKey,
    #[error("reading key file {path}: {source}")]
    KeyFile {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("pseudonym collision in the {0} namespace")]
    Collision(IdNamespace),
}

/// Key material for the pseudonymizing PRF. Never printed.
#[derive(Clone, PartialEq, Eq)]
pub struct SecretKey(Vec<u8>);

impl SecretKey {
    pub fn new(bytes: impl Into<Vec<u8>>) -> Result<Self, IdentityError> {
        let bytes = bytes.into();
        if bytes.len() < MIN_KEY_BYTES {
            return Err(IdentityError::KeyTooShort(bytes.len()));
        }
        Ok(SecretKey(bytes))
    }

    pub fn from_hex(text: &str) -> Result<Self, IdentityError> {
        let bytes = hex::decode(text.trim()).map_err(|_| IdentityError::KeyNotHex)?;
        SecretKey::new(bytes)
    }

    /// A key file holds either hex text or raw bytes.
    pub fn from_file(path: &Path) -> Result<Self, IdentityError> {
        let bytes = std::fs::read(path).map_err(|source| IdentityError::KeyFile {
            path: path.to_path_buf(),
            source,
        })?;
        match std::str::from_utf8(&bytes) {
            Ok(text) if hex::decode(text.trim()).is_ok() => SecretKey::from_hex(text),
            _ => SecretKey::new(bytes),
        }
    }

    /// `MOOCDB_SECRET_KEY` (hex) wins over `MOOCDB_KEY_FILE`, which wins over `fallback_file`.
    pub fn from_env(fallback_file: Option<&Path>) -> Result<Self, IdentityError> {
        if let Ok(hex) = std::env::var(KEY_ENV) {
            return SecretKey::from_hex(&hex);
        }
        if let Ok(path) = std::env::var(KEY_FILE_ENV) {
            return SecretKey::from_file(Path::new(&path));
        }
        match fallback_file {
            Some(p) => SecretKey::from_file(p),
            None => Err(IdentityError::NoKey),
        }
    }

    fn mac(&self) -> HmacSha256 {
        HmacSha256::new_from_slice(&self.0).expect("HMAC accepts any key length")
    }
}

impl fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SecretKey([REDACTED])")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdNamespace {
    Global = 1,
    Course = 2,
    Observed = 3,
    Submissions = 4,
    Collaborations = 5,
    Feedback = 6,
}

impl IdNamespace {
    pub const ALL: [IdNamespace; 6] = [
        IdNamespace::Global,
        IdNamespace::Course,
        IdNamespace::Observed,
        IdNamespace::Submissions,
        IdNamespace::Collaborations,
        IdNamespace::Feedback,
    ];

    pub fn of(id: Id) -> Option<IdNamespace> {
        let tag = id >> TAG_SHIFT;
        IdNamespace::ALL.iter().copied().find(|n| *n as u64 == tag)
    }

    fn label(self) -> &'static str {
        match self {
            IdNamespace::Global => "global",
            IdNamespace::Course => "course",
            IdNamespace::Observed => "observed",
            IdNamespace::Submissions => "submissions",
            IdNamespace::Collaborations => "collaborations",
            IdNamespace::Feedback => "feedback",
        }
    }
}

impl fmt::Display for IdNamespace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeUserIds {
    pub observed_id: Id,
    pub submissions_id: Id,
    pub collaborations_id: Id,
    pub feedback_id: Id,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CourseIdentity {
    pub course_user_id: Id,
    pub modes: ModeUserIds,
}

/// Derives pseudonyms; holds the key.
#[derive(Debug, Clone)]
pub struct Pseudonymizer {
    key: SecretKey,
}

impl Pseudonymizer {
    pub fn new(key: SecretKey) -> Self {
        Pseudonymizer { key }
    }

    fn prf(&self, ns: IdNamespace, course: &str, user: &str) -> Id {
        let mut mac = self.key.mac();
        mac.update(ns.label().as_bytes());
        mac.update(&[0]);
        mac.update(course.as_bytes());
        mac.update(&[0]);
        mac.update(user.as_bytes());
        let out = mac.finalize().into_bytes();
        let body = u64::from_le_bytes(out[..8].try_into().expect("8 bytes")) & BODY_MASK;
        ((ns as u64) << TAG_SHIFT) | body
    }

    pub fn global_id(&self, user: &str) -> Id {
        self.prf(IdNamespace::Global, "", user)
    }

    pub fn course_identity(&self, course: &str, user: &str) -> CourseIdentity {
        CourseIdentity {
            course_user_id: self.prf(IdNamespace::Course, course, user),
            modes: ModeUserIds {
                observed_id: self.prf(IdNamespace::Observed, course, user),
                submissions_id: self.prf(IdNamespace::Submissions, course, user),
                collaborations_id: self.prf(IdNamespace::Collaborations, course, user),
                feedback_id: self.prf(IdNamespace::Feedback, course, user),
            },
        }
    }

    /// Keyed offset in `[-range_ms, range_ms]` used for optional timestamp shifting.
    pub fn time_shift_ms(&self, salt: &str, range_ms: i64) -> i64 {
        if range_ms <= 0 {
            return 0;
        }
        let raw = self.prf(IdNamespace::Global, "time-shift", salt) & BODY_MASK;
        (raw % (2 * range_ms as u64 + 1)) as i64 - range_ms
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub global_user_id: Id,
    pub courses: BTreeMap<String, CourseIdentity>,
}

/// Raw handle → every pseudonym derived for it.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentityLedger {
    pub entries: BTreeMap<String, LedgerEntry>,
}

impl IdentityLedger {
    pub fn global_id(&self, user: &str) -> Option<Id> {
        self.entries.get(user).map(|e| e.global_user_id)
    }

    pub fn course(&self, user: &str, course: &str) -> Option<&CourseIdentity> {
        self.entries.get(user).and_then(|e| e.courses.get(course))
    }

    /// Reverse lookup: which raw handle owns this id (any namespace).
    pub fn owner_of(&self, id: Id) -> Option<&str> {
        self.entries.iter().find_map(|(user, e)| {
            let hit = e.global_user_id == id
                || e.courses.values().any(|c| {
                    let m = c.modes;
                    [c.course_user_id, m.observed_id, m.submissions_id, m.collaborations_id, m.feedback_id]
                        .contains(&id)
                });
            hit.then_some(user.as_str())
        })
    }

    /// Every id grouped by namespace.
    pub fn ids_by_namespace(&self) -> BTreeMap<IdNamespace, Vec<Id>> {
        let mut out: BTreeMap<IdNamespace, Vec<Id>> = BTreeMap::new();
        for e in self.entries.values() {
            out.entry(IdNamespace::Global).or_default().push(e.global_user_id);
            for c in e.courses.values() {
                out.entry(IdNamespace::Course).or_default().push(c.course_user_id);
                out.entry(IdNamespace::Observed).or_default().push(c.modes.observed_id);
                out.entry(IdNamespace::Submissions).or_default().push(c.modes.submissions_id);
                out.entry(IdNamespace::Collaborations).or_default().push(c.modes.collaborations_id);
                out.entry(IdNamespace::Feedback).or_default().push(c.modes.feedback_id);
            }
        }
        out
    }
}

/// Tracks issued ids per namespace and refuses collisions.
#[derive(Debug, Default)]
pub(crate) struct CollisionGuard {
    seen: HashMap<Id, (IdNamespace, String)>,
}

impl CollisionGuard {
    pub(crate) fn claim(&mut self, ns: IdNamespace, id: Id, owner: &str) -> Result<(), IdentityError> {
        match self.seen.get(&id) {
            Some((_, prev)) if prev != owner => Err(IdentityError::Collision(ns)),
            Some(_) => Ok(()),
            None => {
                self.seen.insert(id, (ns, owner.to_string()));
                Ok(())
            }
        }
    }

    pub(crate) fn claim_course(&mut self, course: &str, user: &str, ci: &CourseIdentity) -> Result<(), IdentityError> {
        let owner = format!("{course}\0{user}");
        self.claim(IdNamespace::Course, ci.course_user_id, &owner)?;
        self.claim(IdNamespace::Observed, ci.modes.observed_id, &owner)?;
        self.claim(IdNamespace::Submissions, ci.modes.submissions_id, &owner)?;
        self.claim(IdNamespace::Collaborations, ci.modes.collaborations_id, &owner)?;
        self.claim(IdNamespace::Feedback, ci.modes.feedback_id, &owner)
    }
}

/// Derives the full ledger for every (user, course) pair.
pub fn derive_identities(
    raw_users: &[String],
    courses: &[String],
    key: &SecretKey,
) -> Result<IdentityLedger, IdentityError> {
    let p = Pseudonymizer::new(key.clone());
    let mut guard = CollisionGuard::default();
    let mut ledger = IdentityLedger::default();
    for user in raw_users {
        if ledger.entries.contains_key(user) {
            continue;
        }
        let global = p.global_id(user);
        guard.claim(IdNamespace::Global, global, user)?;
        let mut per_course = BTreeMap::new();
        for course in courses {
            let ci = p.course_identity(course, user);
            guard.claim_course(course, user, &ci)?;
            per_course.insert(course.clone(), ci);
        }
        ledger.entries.insert(
            user.clone(),
            LedgerEntry {
                global_user_id: global,
                courses: per_course,
            },
        );
    }
    Ok(ledger)
}

/// Demographic record; lives only on the ledger side, never in a store or partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserPii {
    pub global_user_id: Id,
    pub age: u32,
    pub country: String,
    pub most_frequent_ip: String,
}

/// A demographic profile as delivered alongside raw logs (keyed by raw handle).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PiiProfile {
    pub raw_user: String,
    pub age: u32,
    pub country: String,
    pub most_frequent_ip: String,
}

impl PiiProfile {
    pub fn to_pii(&self, ledger: &IdentityLedger) -> Option<UserPii> {
        Some(UserPii {
            global_user_id: ledger.global_id(&self.raw_user)?,
            age: self.age,
            country: self.country.clone(),
            most_frequent_ip: self.most_frequent_ip.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn key() -> SecretKey {
        SecretKey::new(*b"0123456789abcdef").unwrap()
    }

    #[test]
    fn short_key_refused() {
        assert!(matches!(SecretKey::new(vec![1u8; 15]), Err(IdentityError::KeyTooShort(15))));
        assert!(SecretKey::from_hex("00ff").is_err());
        assert!(matches!(SecretKey::from_hex("zz"), Err(IdentityError::KeyNotHex)));
    }

    #[test]
    fn one_user_two_courses() {
        let l = derive_identities(&["alice".into()], &["c1".into(), "c2".into()], &key()).unwrap();
        let ids = l.ids_by_namespace();
        assert_eq!(ids[&IdNamespace::Global].len(), 1);
        let courses: HashSet<Id> = ids[&IdNamespace::Course].iter().copied().collect();
        assert_eq!(courses.len(), 2);
        let modes: HashSet<Id> = [
            IdNamespace::Observed,
            IdNamespace::Submissions,
            IdNamespace::Collaborations,
            IdNamespace::Feedback,
        ]
        .iter()
        .flat_map(|n| ids[n].iter().copied())
        .collect();
        assert_eq!(modes.len(), 8);
    }

    #[test]
    fn deterministic_under_same_key() {
        let users = vec!["a".to_string(), "b".to_string()];
        let courses = vec!["c".to_string()];
        let a = derive_identities(&users, &courses, &key()).unwrap();
        let b = derive_identities(&users, &courses, &key()).unwrap();
        assert_eq!(a, b);
        let other = derive_identities(&users, &courses, &SecretKey::new([7u8; 32]).unwrap()).unwrap();
        assert_ne!(a.global_id("a"), other.global_id("a"));
    }

    #[test]
    fn five_hundred_users_three_courses_all_distinct() {
        let users: Vec<String> = (0..500).map(|i| format!("user{i:04}")).collect();
        let courses: Vec<String> = (0..3).map(|i| format!("course-{i}")).collect();
        let l = derive_identities(&users, &courses, &key()).unwrap();
        let ids = l.ids_by_namespace();
        let mut all = HashSet::new();
        let mut mode_ids = 0;
        for (ns, v) in &ids {
            for id in v {
                assert_eq!(IdNamespace::of(*id), Some(*ns));
                assert!(all.insert(*id), "duplicate id {id}");
            }
            if !matches!(ns, IdNamespace::Global | IdNamespace::Course) {
                mode_ids += v.len();
            }
        }
        assert_eq!(mode_ids, 500 * 3 * 4);
    }

    #[test]
    fn debug_redacts_key() {
        assert_eq!(format!("{:?}", key()), "SecretKey([REDACTED])");
    }

    #[test]
    fn time_shift_within_range() {
        let p = Pseudonymizer::new(key());
        for salt in ["a", "b", "c", "d"] {
            let s = p.time_shift_ms(salt, 1000);
            assert!((-1000..=1000).contains(&s));
        }
        assert_eq!(p.time_shift_ms("a", 0), 0);
    }
}
