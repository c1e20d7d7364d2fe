use std::fmt;
use std::path::PathBuf;

use crate::autodiff::OpKind;

/// Crate-wide result alias.
pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Where a numerical failure happened, as far as it is known.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Site {
    /// Kind of the first graph node whose forward value was non-finite.
    pub op: Option<OpKind>,
    /// Adaptation (inner) step index.
    pub step: Option<usize>,
    /// Task index inside a meta-batch.
    pub task: Option<usize>,
    /// Outer iteration.
    pub iteration: Option<usize>,
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if let Some(op) = self.op {
            parts.push(format!("node {op}"));
        }
        if let Some(step) = self.step {
            parts.push(format!("adaptation step {step}"));
        }
        if let Some(task) = self.task {
            parts.push(format!("task {task}"));
        }
        if let Some(it) = self.iteration {
            parts.push(format!("iteration {it}"));
        }
        if parts.is_empty() {
            f.write_str("unknown site")
        } else {
            f.write_str(&parts.join(", "))
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("config line {line}: key `{key}`: {message}")]
    Parse { line: usize, key: String, message: String },

    #[error("numerical failure at {site}: {message}")]
    Numerical { site: Site, message: String },

    #[error("check failed: {0}")]
    Check(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn non_finite(op: OpKind) -> Self {
        Error::Numerical {
            site: Site {
                op: Some(op),
                ..Site::default()
            },
            message: "non-finite intermediate value".into(),
        }
    }

    /// Attaches an adaptation step index to a numerical error.
    pub fn at_step(self, step: usize) -> Self {
        self.map_site(|s| s.step = Some(step))
    }

    /// Attaches a task index to a numerical error.
    pub fn at_task(self, task: usize) -> Self {
        self.map_site(|s| s.task = Some(task))
    }

    pub fn at_iteration(self, iteration: usize) -> Self {
        self.map_site(|s| s.iteration = Some(iteration))
    }

    fn map_site(mut self, f: impl FnOnce(&mut Site)) -> Self {
        if let Error::Numerical { site, .. } = &mut self {
            f(site);
        }
        self
    }

    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical { .. })
    }

    /// Process exit status used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parse { .. } | Error::Io { .. } => 1,
            Error::Numerical { .. } => 2,
            Error::Check(_) => 3,
        }
    }
}
