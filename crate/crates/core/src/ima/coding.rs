//! Co-occurrence coding rules, applied to each level separately.

use super::IMSet;

/// Action and Reflection are both kept; a Protest at a level replaces the
/// Action and Reflection of that same level.
pub fn apply_cooccurrence(types: &IMSet) -> IMSet {
    let mut out = IMSet::new();
    for level in [1u8, 2] {
        let at_level = types.iter().copied().filter(|t| t.level() == level);
        if types.iter().any(|t| t.level() == level && t.is_protest()) {
            out.extend(at_level.filter(|t| t.is_protest()));
        } else {
            out.extend(at_level);
        }
    }
    out
}
