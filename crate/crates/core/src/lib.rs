//! Tooling for building named-entity corpora on the UNER hierarchy.
//!
//! The crate covers the whole annotation workflow: a validated four-level
//! entity [`taxonomy`], interchangeable annotation [`codecs`], recall-ordered
//! [`ensemble`] merging of tagger output, knowledge-base label correction
//! ([`kb`]), alignment-based cross-lingual [`projection`], human [`review`]
//! with an HTTP task service, and [`evaluation`] of the resulting corpora.
//! [`pipeline`] chains the stages over files on disk.

pub mod codecs;
pub mod ensemble;
pub mod evaluation;
pub mod kb;
pub mod pipeline;
pub mod projection;
pub mod review;
pub mod taxonomy;

pub use codecs::{AnnotatedDocument, EntitySpan, Token};
pub use taxonomy::{TagPath, Taxonomy};
