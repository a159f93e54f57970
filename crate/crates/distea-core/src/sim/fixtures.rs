//! Fixed demo scripts: the two-component string-task exchange used by the
//! integration tests and the CLI demo. The client ships a task string to
//! the server, which computes the largest character and replies.

use crate::sim::script::{parse_script, ScriptedProgram};

pub const EXAMPLE_E_SERVER: &str = "\
distea-script v1
process S
listen srv
enter S::main
enter S::init
accept conn srv
into S::init
return S::init
into S::main
enter S::serve
recv conn
enter S::getMax
into S::getMax
return S::getMax
into S::serve
send conn 4c
return S::serve
into S::main
return S::main
";

pub const EXAMPLE_E_CLIENT: &str = "\
distea-script v1
process C
enter C::main
enter C::init
connect conn srv
into C::init
return C::init
into C::main
enter C::compute
enter C::shuffle
into C::shuffle
return C::shuffle
into C::compute
send conn 48454c4c4f
recv conn
return C::compute
into C::main
return C::main
";

/// Both sides of the exchange, server first.
pub fn example_e() -> Vec<ScriptedProgram> {
    vec![
        parse_script(EXAMPLE_E_SERVER.as_bytes()).expect("fixture script must parse"),
        parse_script(EXAMPLE_E_CLIENT.as_bytes()).expect("fixture script must parse"),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_parse_and_validate() {
        let programs = example_e();
        assert_eq!(programs.len(), 2);
        assert_eq!(programs[0].process.as_str(), "S");
        assert_eq!(programs[1].process.as_str(), "C");
    }
}
