use mimbfd_core::{Error, Result};

pub const SEED_ENV: &str = "MIMBFD_SEED";

/// Command-line flag, then the config file, then `MIMBFD_SEED`, then 0.
pub fn resolve_seed(flag: Option<u64>, file: Option<u64>) -> Result<u64> {
    if let Some(s) = flag.or(file) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flag_beats_file() {
        assert_eq!(resolve_seed(Some(3), Some(7)).unwrap(), 3);
        assert_eq!(resolve_seed(None, Some(7)).unwrap(), 7);
    }
}
