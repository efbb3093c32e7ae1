use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("graph error: {0}")]
    Graph(String),

    #[error("directed cycle through {0}")]
    Cycle(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("collinear parents: {0}")]
    Collinear(String),

    #[error("too few observations: {rows} rows for {params} fixed effects")]
    TooFewRows { rows: usize, params: usize },

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("scoring {node} with parents [{parents}]: {source}")]
    Scoring {
        node: String,
        parents: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn scoring(node: &str, parents: &[String], source: Error) -> Self {
        Error::Scoring {
            node: node.to_string(),
            parents: parents.join(", "),
            source: Box::new(source),
        }
    }

    /// True for failures rooted in floating-point breakdown rather than bad input.
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::Numeric(_) | Error::Collinear(_) => true,
            Error::Scoring { source, .. } => source.is_numeric(),
            _ => false,
        }
    }

    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_) => true,
            Error::Scoring { source, .. } => source.is_config(),
            _ => false,
        }
    }
}
