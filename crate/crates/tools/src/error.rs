use std::path::{Path, PathBuf};

use serde_json::{json, Value};

pub type Result<T> = std::result::Result<T, ToolError>;

#[derive(Debug, thiserror::Error)]
pub enum ToolError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}{}: {message}", path.display(), location(*line, *column))]
    Parse {
        path: PathBuf,
        line: Option<usize>,
        column: Option<usize>,
        message: String,
    },
    #[error(transparent)]
    Core(#[from] snn_core::Error),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    CheckFailed(String),
}

fn location(line: Option<usize>, column: Option<usize>) -> String {
    match (line, column) {
        (Some(l), Some(c)) => format!(":{l}:{c}"),
        (Some(l), None) => format!(":{l}"),
        _ => String::new(),
    }
}

pub fn io_err(path: &Path, source: std::io::Error) -> ToolError {
    ToolError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Parse error of a TOML document, located by line and column.
pub fn toml_err(path: &Path, text: &str, e: &toml::de::Error) -> ToolError {
    let (line, column) = match e.span() {
        Some(span) => {
            let before = &text[..span.start.min(text.len())];
            let line = before.matches('\n').count() + 1;
            let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
            (Some(line), Some(column))
        }
        None => (None, None),
    };
    ToolError::Parse {
        path: path.to_path_buf(),
        line,
        column,
        message: e.message().trim().to_string(),
    }
}

pub fn json_err(path: &Path, e: &serde_json::Error) -> ToolError {
    ToolError::Parse {
        path: path.to_path_buf(),
        line: Some(e.line()),
        column: Some(e.column()),
        message: e.to_string(),
    }
}

impl ToolError {
    pub fn kind(&self) -> &'static str {
        match self {
            ToolError::Io { .. } => "io",
            ToolError::Parse { .. } => "parse",
            ToolError::Core(snn_core::Error::Infeasible { .. }) => "infeasible",
            ToolError::Core(snn_core::Error::BudgetTooSmall { .. }) => "budget_too_small",
            ToolError::Core(snn_core::Error::BadMagic { .. })
            | ToolError::Core(snn_core::Error::TruncatedFile { .. })
            | ToolError::Core(snn_core::Error::DimensionMismatch { .. }) => "data",
            ToolError::Core(snn_core::Error::InvalidConfig(_))
            | ToolError::Core(snn_core::Error::InvalidNetwork(_)) => "config",
            ToolError::Core(_) => "engine",
            ToolError::Usage(_) => "usage",
            ToolError::CheckFailed(_) => "check_failed",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            ToolError::CheckFailed(_) => 1,
            ToolError::Usage(_) | ToolError::Parse { .. } => 2,
            ToolError::Io { .. } => 3,
            ToolError::Core(snn_core::Error::Infeasible { .. })
            | ToolError::Core(snn_core::Error::BudgetTooSmall { .. }) => 4,
            ToolError::Core(_) => 5,
        }
    }

    /// One-line JSON description for scripts.
    pub fn record(&self) -> Value {
        let mut v = json!({
            "error": self.kind(),
            "message": self.to_string(),
        });
        let obj = v.as_object_mut().unwrap();
        match self {
            ToolError::Io { path, .. } => {
                obj.insert("path".into(), json!(path));
            }
            ToolError::Parse {
                path, line, column, ..
            } => {
                obj.insert("path".into(), json!(path));
                obj.insert("line".into(), json!(line));
                obj.insert("column".into(), json!(column));
            }
            ToolError::Core(snn_core::Error::Infeasible {
                layer,
                footprint,
                budget,
            }) => {
                obj.insert("layer".into(), json!(layer));
                obj.insert("footprint".into(), json!(footprint));
                obj.insert("budget".into(), json!(budget));
            }
            ToolError::Core(snn_core::Error::BudgetTooSmall {
                owner,
                needed,
                budget,
            }) => {
                obj.insert("subnetwork".into(), json!(owner));
                obj.insert("needed".into(), json!(needed));
                obj.insert("budget".into(), json!(budget));
            }
            _ => {}
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_errors_are_located() {
        let text = "a = 1\nb = = 2\n";
        let e = toml::from_str::<toml::Table>(text).unwrap_err();
        match toml_err(Path::new("x.toml"), text, &e) {
            ToolError::Parse { line, column, .. } => {
                assert_eq!(line, Some(2));
                assert!(column.is_some());
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn infeasible_record_names_the_layer() {
        let e = ToolError::Core(snn_core::Error::Infeasible {
            layer: 3,
            footprint: 9,
            budget: 8,
        });
        assert_eq!(e.record()["layer"], 3);
        assert_eq!(e.exit_code(), 4);
    }
}
