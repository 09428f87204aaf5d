//! Pseudonymous identities and privacy-graded partitions.

pub mod audit;
pub mod identity;
pub mod partition;

pub use audit::{audit_linkability, audit_stores, scan_for_pii, LinkabilityReport, PiiLeak};
pub use identity::{derive_identities, IdNamespace, IdentityLedger, Pseudonymizer, SecretKey, UserPii};
pub use partition::{
    export_partition, load_partition, AccessLevel, Linkage, PartitionError, PartitionManifest,
    PartitionOptions,
};
