//! One function per subcommand. Each loads and validates its whole
//! configuration before reading data or training anything.

use serde::de::DeserializeOwned;
use toml::Table;

use crate::config::{config_hash, from_table, load_merged};
use crate::error::CliError;
use crate::Common;

mod compare;
mod evaluate;
mod generate;
mod preprocess;
mod threshold;
mod train;

pub use compare::compare;
pub use evaluate::evaluate;
pub use generate::generate;
pub use preprocess::preprocess;
pub use threshold::tune_threshold;
pub use train::{train, Method};

/// A parsed command configuration with its provenance hash.
pub(crate) struct Loaded<T> {
    pub config: T,
    pub table: Table,
    pub hash: String,
}

pub(crate) fn load<T: DeserializeOwned>(command: &'static str, common: &Common) -> Result<Loaded<T>, CliError> {
    let table = load_merged(common.config.as_deref(), &common.set, common.seed)?;
    let hash = config_hash(command, &table);
    let config = from_table(table.clone(), command)?;
    Ok(Loaded { config, table, hash })
}
