//! Abstract syntax of policies and sketches, with a parser and printer.

mod ast;
mod parse;
mod print;

pub use ast::*;
pub use parse::{parse_expr, parse_policy, parse_pred, ParseError};
pub use print::{infer_threshold_dim, print_expr, print_policy, print_pred};
