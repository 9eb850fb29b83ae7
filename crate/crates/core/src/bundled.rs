//! Scenario packs compiled into the binary.

use crate::formats::{parse_pack, ScenarioPack};

pub const TBE_PACK: &str = include_str!("../content/tbe.vpack");
pub const MICROSCOPY_PACK: &str = include_str!("../content/microscopy.vpack");

/// `(file name, text)` of every bundled pack, ordered by pack id.
pub const ALL: &[(&str, &str)] = &[("microscopy.vpack", MICROSCOPY_PACK), ("tbe.vpack", TBE_PACK)];

pub fn tbe_pack() -> ScenarioPack {
    parse_pack(TBE_PACK.as_bytes()).expect("bundled TBE pack is valid")
}

pub fn microscopy_pack() -> ScenarioPack {
    parse_pack(MICROSCOPY_PACK.as_bytes()).expect("bundled microscopy pack is valid")
}

pub fn all_packs() -> Vec<ScenarioPack> {
    vec![microscopy_pack(), tbe_pack()]
}

/// Looks a bundled pack up by its pack id.
pub fn by_id(pack_id: &str) -> Option<ScenarioPack> {
    all_packs().into_iter().find(|p| p.pack_id == pack_id)
}
