use pilotwave_core::Category;
use serde_json::json;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] pilotwave_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Runtime(String),
    #[error("{field}: {inner}")]
    Field { field: String, inner: Box<CliError> },
}

impl CliError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn in_field(self, field: impl Into<String>) -> Self {
        CliError::Field {
            field: field.into(),
            inner: Box::new(self),
        }
    }

    pub fn category(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Core(e) => match e.category() {
                Category::Config => "config",
                Category::Physics => "physics",
                Category::Numerical => "numerical",
                Category::Runtime => "runtime",
            },
            CliError::Io { .. } => "io",
            CliError::Runtime(_) => "runtime",
            CliError::Field { inner, .. } => inner.category(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        exit_code(self.category())
    }

    pub fn field(&self) -> Option<&str> {
        match self {
            CliError::Field { field, .. } => Some(field),
            _ => None,
        }
    }

    /// One-line machine-readable form.
    pub fn to_json_line(&self) -> String {
        let mut v = json!({ "error": self.category(), "message": self.to_string() });
        if let Some(f) = self.field() {
            v["field"] = json!(f);
        }
        v.to_string()
    }
}

pub fn exit_code(category: &str) -> i32 {
    match category {
        "config" => 2,
        "physics" => 3,
        "numerical" => 4,
        "runtime" => 5,
        "io" => 6,
        _ => 1,
    }
}
