#![allow(dead_code)]

use std::path::Path;

use ltrf::cfg::{build_cfg, build_live_ranges, compute_liveness, LiveRangeMap};
use ltrf::intervals::{form_intervals, IntervalCfg, IntervalConfig};
use ltrf::ir::{parse_program, Program};
use ltrf::renumber::{BankLayout, BankMapping};

pub fn fixture(name: &str) -> Program {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name);
    parse_program(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Fixtures whose every path terminates.
pub const TERMINATING: [&str; 2] = ["listing1.ptx", "register_bound.ptx"];

/// Four banks of two registers, contiguous.
pub fn fig8_layout() -> BankLayout {
    BankLayout::new(4, BankMapping::Div).with_registers_per_bank(2)
}

pub fn intervals_of(p: &Program, cfg: &IntervalConfig) -> (IntervalCfg, LiveRangeMap) {
    let c = build_cfg(p);
    let l = compute_liveness(&c);
    let icfg = form_intervals(&c, &l, cfg).unwrap();
    (icfg, build_live_ranges(&c, &l))
}
