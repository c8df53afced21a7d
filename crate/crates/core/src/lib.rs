//! Explanations for exploratory data-analysis steps.
//!
//! Given input frames and one filter, group-by, join or union, the engine
//! finds the output columns whose distributions stand out, the row sets of
//! the inputs that drive that, and returns the Pareto-best pairs as
//! captioned chart specifications.
//!
//! ```
//! use std::sync::Arc;
//! use eda_explain::frame::read_csv_str;
//! use eda_explain::ops::{make_step, parse_operation};
//! use eda_explain::engine::{explain_step, ExplainConfig};
//!
//! let csv = "genre,plays\nrock,10\nrock,12\npop,90\npop,80\njazz,11\njazz,95\n";
//! let frame = Arc::new(read_csv_str("songs", csv, &Default::default()).unwrap());
//! let step = make_step(parse_operation("FILTER plays > 50").unwrap(), vec![frame]).unwrap();
//! let result = explain_step(&step, &ExplainConfig::default()).unwrap();
//! for e in &result.explanations {
//!     println!("{}", e.caption);
//! }
//! ```

pub mod contribution;
pub mod engine;
pub mod eval;
pub mod frame;
pub mod measure;
pub mod ops;
pub mod partition;
pub mod render;
pub mod skyline;
