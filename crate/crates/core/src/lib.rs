//! Intent classification and automation dispatch.
//!
//! Instructions are tokenized and TF-IDF weighted ([`textprep`]), classified
//! by an LSTM with a softmax head ([`neural`], [`trainer`]), scored with
//! [`metrics`], and turned into device commands on an emulated controller
//! ([`dispatch`]).

pub mod corpus;
pub mod dispatch;
pub mod metrics;
pub mod neural;
pub mod textprep;
pub mod trainer;
