//! Bundled IEEE test systems (MATPOWER data).

use crate::grid::NetworkCase;
use crate::matpower::parse_case;

pub const CASE14: &str = include_str!("../data/case14.m");
pub const CASE39: &str = include_str!("../data/case39.m");
pub const CASE57: &str = include_str!("../data/case57.m");
pub const CASE118: &str = include_str!("../data/case118.m");

pub fn ieee14() -> NetworkCase {
    parse_case(CASE14).expect("bundled case14 is valid")
}

pub fn ieee39() -> NetworkCase {
    parse_case(CASE39).expect("bundled case39 is valid")
}

pub fn ieee57() -> NetworkCase {
    parse_case(CASE57).expect("bundled case57 is valid")
}

pub fn ieee118() -> NetworkCase {
    parse_case(CASE118).expect("bundled case118 is valid")
}

/// Looks up a bundled case by name (`case14`, `ieee14`, `14`, ...).
pub fn by_name(name: &str) -> Option<NetworkCase> {
    let digits: String = name.chars().filter(|c| c.is_ascii_digit()).collect();
    match digits.as_str() {
        "14" => Some(ieee14()),
        "39" => Some(ieee39()),
        "57" => Some(ieee57()),
        "118" => Some(ieee118()),
        _ => None,
    }
}

/// Outage-count range used for each bundled system.
pub fn default_k_range(case: &NetworkCase) -> (usize, usize) {
    match case.n_buses() {
        14 => (2, 4),
        39 => (2, 6),
        57 => (2, 5),
        118 => (2, 15),
        _ => (2, 3),
    }
}
