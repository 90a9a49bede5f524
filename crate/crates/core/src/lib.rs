//! Multi-word CAS with path validation, and two lock-free search trees
//! (an unbalanced internal BST and a relaxed AVL tree) built on it.

pub mod atomicword;
pub mod avl;
pub mod bst;
pub mod checker;
mod domain;
mod node;
pub mod pathcas;
pub mod reclaim;
#[cfg(feature = "sched")]
pub mod scenarios;
pub mod sched;

pub use atomicword::{CasWord, DescriptorHandle, DescriptorKind};
pub use avl::Avl;
pub use bst::{Bst, TreeOptions};
pub use checker::{Mode, SearchTree, StructuralReport};
pub use domain::{Domain, DomainConfig};
pub use node::{KEY_MAX, KEY_MIN, VALUE_MAX};
pub use pathcas::{PathCasStats, Status, ThreadContext, MAX_ENTRIES, MAX_PATH, RETRY_LIMIT};
pub use reclaim::{Guard, ReclaimStats};
