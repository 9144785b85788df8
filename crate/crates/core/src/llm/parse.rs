use std::sync::LazyLock;

use regex::Regex;

use crate::error::{Error, Result};
use crate::va::VaPair;

static VA_PATTERN: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"([-+]?(?:\d+(?:\.\d*)?|\.\d+))\s*#\s*([-+]?(?:\d+(?:\.\d*)?|\.\d+))").expect("valid pattern")
});

/// Extracts the first `number#number` in a model response and clips both
/// values into [1, 9].
pub fn parse_llm_output(raw: &str) -> Result<VaPair> {
    let caps = VA_PATTERN.captures(raw).ok_or_else(|| Error::VaParse {
        input: raw.to_string(),
        reason: "no valence#arousal pattern found".into(),
    })?;
    let num = |i: usize| -> Result<f64> {
        caps[i].parse::<f64>().map_err(|e| Error::VaParse {
            input: raw.to_string(),
            reason: e.to_string(),
        })
    };
    Ok(VaPair::clipped(num(1)?, num(2)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pair(s: &str) -> (f64, f64) {
        let p = parse_llm_output(s).unwrap();
        (p.valence(), p.arousal())
    }

    #[test]
    fn documented_examples() {
        assert_eq!(pair("7.50#6.80"), (7.5, 6.8));
        assert_eq!(pair("The answer is 9.80#0.20."), (9.0, 1.0));
        assert!(parse_llm_output("I cannot determine this.").is_err());
    }

    #[test]
    fn lenient_forms() {
        assert_eq!(pair("Answer: 6 # 4"), (6.0, 4.0));
        assert_eq!(pair("3.2#5.1 or maybe 8#8"), (3.2, 5.1));
        assert_eq!(pair("-2#.5"), (1.0, 1.0));
        assert!(parse_llm_output("7.5").is_err());
        assert!(parse_llm_output("#").is_err());
    }

    proptest! {
        #[test]
        fn never_leaves_range(s in ".*") {
            if let Ok(p) = parse_llm_output(&s) {
                prop_assert!((1.0..=9.0).contains(&p.valence()));
                prop_assert!((1.0..=9.0).contains(&p.arousal()));
            }
        }

        #[test]
        fn clips_any_numbers(v in -1e6f64..1e6, a in -1e6f64..1e6) {
            let p = parse_llm_output(&format!("prose {v:.3}#{a:.3} more")).unwrap();
            prop_assert!((1.0..=9.0).contains(&p.valence()) && (1.0..=9.0).contains(&p.arousal()));
        }
    }
}
