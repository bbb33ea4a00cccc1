//! Source diagnostics with line/column positions.

use std::fmt;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    /// 1-based line.
    pub line: u32,
    /// 1-based column of the offending token (0 when unknown).
    pub col: u32,
    pub msg: String,
}

impl Diagnostic {
    pub fn new(line: u32, col: u32, msg: impl Into<String>) -> Diagnostic {
        Diagnostic { line, col, msg: msg.into() }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.col > 0 {
            write!(f, "line {}:{}: {}", self.line, self.col, self.msg)
        } else {
            write!(f, "line {}: {}", self.line, self.msg)
        }
    }
}

/// Renders a diagnostic list one per line, the shape `analyze` prints.
pub fn render(diags: &[Diagnostic]) -> String {
    let mut out = String::new();
    for d in diags {
        out.push_str(&d.to_string());
        out.push('\n');
    }
    out
}
