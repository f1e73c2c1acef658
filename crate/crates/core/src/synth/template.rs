use std::collections::BTreeMap;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::SynthError;
use crate::ingest::LetterCase;

/// Hand-authored letter shapes: letter → strokes → `[x, y]` points in the
/// unit box, x right and y up. Lowercase letters sit on a baseline at y = 0.3
/// with x-height 0.7, ascenders reaching 1.0 and descenders 0.0.
const TEMPLATE_JSON: &str = include_str!("../../data/templates.json");

pub type Point = [f64; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrokeTemplate {
    pub letter: char,
    pub case: LetterCase,
    pub strokes: Vec<Vec<Point>>,
}

impl StrokeTemplate {
    pub fn validate(&self) -> Result<(), String> {
        if !(1..=4).contains(&self.strokes.len()) {
            return Err(format!("{}: {} strokes", self.letter, self.strokes.len()));
        }
        for s in &self.strokes {
            if s.len() < 2 {
                return Err(format!("{}: stroke with {} points", self.letter, s.len()));
            }
            if s.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(format!("{}: point outside unit box", self.letter));
            }
        }
        Ok(())
    }

    /// Axis-aligned bounding box `(min, max)` over all strokes.
    pub fn bounds(&self) -> (Point, Point) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in self.strokes.iter().flatten() {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        (lo, hi)
    }
}

fn template_table() -> &'static BTreeMap<char, StrokeTemplate> {
    static TABLE: OnceLock<BTreeMap<char, StrokeTemplate>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let raw: BTreeMap<String, Vec<Vec<Point>>> =
            serde_json::from_str(TEMPLATE_JSON).expect("bundled templates.json is valid JSON");
        raw.into_iter()
            .map(|(key, strokes)| {
                let letter = key.chars().next().expect("non-empty template key");
                let case = LetterCase::of(letter).expect("template keys are letters");
                let t = StrokeTemplate {
                    letter,
                    case,
                    strokes,
                };
                if let Err(e) = t.validate() {
                    panic!("bundled template invalid: {e}");
                }
                (letter, t)
            })
            .collect()
    })
}

/// Template for `letter` written in `case`. The letter may be given in either
/// case; it is converted to the requested one.
pub fn letter_template(letter: char, case: LetterCase) -> Result<StrokeTemplate, SynthError> {
    if LetterCase::of(letter).is_none() {
        return Err(SynthError::UnknownLabel(letter));
    }
    let key = match case {
        LetterCase::Upper => letter.to_ascii_uppercase(),
        LetterCase::Lower => letter.to_ascii_lowercase(),
    };
    template_table()
        .get(&key)
        .cloned()
        .ok_or(SynthError::UnknownLabel(letter))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covers_all_52_letters() {
        assert_eq!(template_table().len(), 52);
        for case in [LetterCase::Upper, LetterCase::Lower] {
            for c in case.alphabet() {
                let t = letter_template(c, case).unwrap();
                assert_eq!(t.letter, c);
                assert!(t.validate().is_ok());
            }
        }
    }

    #[test]
    fn stroke_counts() {
        let b = letter_template('B', LetterCase::Upper).unwrap();
        assert_eq!(b.strokes.len(), 3);
        // Vertical line first, then two bowls bulging to the right.
        let stem = &b.strokes[0];
        assert!(stem.iter().all(|p| (p[0] - stem[0][0]).abs() < 1e-12));
        for bowl in &b.strokes[1..] {
            assert!(bowl.len() > 5);
            assert!(bowl.iter().any(|p| p[0] > 0.75));
        }
        assert_eq!(letter_template('l', LetterCase::Lower).unwrap().strokes.len(), 1);
        assert_eq!(letter_template('X', LetterCase::Upper).unwrap().strokes.len(), 2);
    }

    #[test]
    fn average_stroke_counts_favor_uppercase() {
        let mean = |case: LetterCase| {
            case.alphabet()
                .map(|c| letter_template(c, case).unwrap().strokes.len())
                .sum::<usize>() as f64
                / 26.0
        };
        assert!(mean(LetterCase::Upper) > mean(LetterCase::Lower));
    }

    #[test]
    fn unknown_letter() {
        assert!(matches!(
            letter_template('ß', LetterCase::Upper),
            Err(SynthError::UnknownLabel('ß'))
        ));
        assert_eq!(letter_template('q', LetterCase::Upper).unwrap().letter, 'Q');
    }

    #[test]
    fn deterministic() {
        assert_eq!(
            letter_template('R', LetterCase::Upper).unwrap(),
            letter_template('R', LetterCase::Upper).unwrap()
        );
    }
}
