//! Opaque identifiers.
//!
//! Ids are minted from per-kind counters held in the replicated state, so a
//! replay of the event log hands out the same ids in the same order.

use std::fmt;

use serde::{Deserialize, Serialize};

macro_rules! id_type {
    ($name:ident, $prefix:literal) => {
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub const PREFIX: &'static str = $prefix;

            pub fn from_counter(n: u64) -> Self {
                Self(format!("{}_{:04}", $prefix, n))
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }
    };
}

id_type!(TeamId, "team");
id_type!(UserId, "user");
id_type!(MeetingId, "meeting");
id_type!(SessionId, "session");
id_type!(DraftId, "draft");
id_type!(GoalId, "goal");
id_type!(ReflectionId, "reflection");
id_type!(RecordId, "feedback");

/// Per-kind counters for minting ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub teams: u64,
    pub users: u64,
    pub meetings: u64,
    pub sessions: u64,
    pub drafts: u64,
    pub goals: u64,
    pub reflections: u64,
    pub records: u64,
}
