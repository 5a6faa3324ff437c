//! Random form generation on a fixed row grid.
//!
//! Each row holds a label on the left and its input on the right. An odd
//! element count adds one unit label to the right of a shortened input, the
//! way a currency sits next to an amount.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::{ElementKind, ElementSpec, FormSpecification, SupervisionPolicy};
use crate::geometry::Rect;

const BORDER: f64 = 4.0;
const ROW_TOP: f64 = 16.0;
const ROW_PITCH: f64 = 10.0;
const ROW_HEIGHT: f64 = 8.0;
const LABEL_X: f64 = BORDER;
const LABEL_W: f64 = 34.0;
const INPUT_X: f64 = 42.0;
const INPUT_W: f64 = 50.0;
const SHORT_INPUT_W: f64 = 34.0;
const UNIT_X: f64 = 78.0;
const UNIT_W: f64 = 14.0;

/// Rows that fit between the title band and the bottom border.
pub const MAX_ROWS: usize = ((100.0 - BORDER - ROW_TOP - ROW_HEIGHT) / ROW_PITCH) as usize + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ContentClass {
    EnglishWords,
    Numeric,
    RandomAlpha,
}

impl ContentClass {
    pub const ALL: [ContentClass; 3] = [Self::EnglishWords, Self::Numeric, Self::RandomAlpha];

    /// A random value of this class with length in `[min_len, max_len]`.
    pub fn sample<R: Rng + ?Sized>(self, rng: &mut R, min_len: usize, max_len: usize) -> String {
        let len = rng.random_range(min_len..=max_len);
        match self {
            Self::Numeric => (0..len).map(|_| char::from(b'0' + rng.random_range(0..10u8))).collect(),
            Self::RandomAlpha => (0..len)
                .map(|_| {
                    let c = rng.random_range(0..52u8);
                    if c < 26 { char::from(b'A' + c) } else { char::from(b'a' + c - 26) }
                })
                .collect(),
            Self::EnglishWords => english(rng, min_len, len),
        }
    }
}

const WORDS: &[&str] = &[
    "account", "amount", "bank", "city", "date", "name", "street", "transfer", "payment", "note",
    "reference", "purpose", "owner", "branch", "country", "postal", "code", "number", "holder",
    "monthly", "rent", "salary", "invoice", "order", "gift", "travel", "dose", "volume", "unit",
    "limit", "total", "balance", "notice", "first", "last", "family", "house", "green", "river",
    "stone", "paper", "window", "garden", "summer", "winter", "light", "table", "chair", "music",
];

fn english<R: Rng + ?Sized>(rng: &mut R, min_len: usize, target: usize) -> String {
    let mut out = String::new();
    loop {
        let w = WORDS.choose(rng).expect("word list is not empty");
        let extra = if out.is_empty() { w.len() } else { w.len() + 1 };
        if out.len() + extra > target {
            if out.len() >= min_len {
                return out;
            }
            // Pad a too-short phrase with a truncated word.
            let need = target.max(min_len) - out.len() - usize::from(!out.is_empty());
            if !out.is_empty() {
                out.push(' ');
            }
            out.extend(w.chars().cycle().take(need));
            return out;
        }
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(w);
        if out.len() == target {
            return out;
        }
    }
}

/// An IBAN-like account code: country letters, check digits and 12-20
/// uppercase alphanumerics, 16-24 characters in total.
pub fn iban_like<R: Rng + ?Sized>(rng: &mut R) -> String {
    let len = rng.random_range(16..=24);
    iban_like_len(rng, len)
}

pub fn iban_like_len<R: Rng + ?Sized>(rng: &mut R, len: usize) -> String {
    const ALNUM: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";
    let mut s = String::with_capacity(len);
    for _ in 0..2 {
        s.push(char::from(b'A' + rng.random_range(0..26u8)));
    }
    for _ in 0..2 {
        s.push(char::from(b'0' + rng.random_range(0..10u8)));
    }
    while s.len() < len {
        s.push(char::from(*ALNUM.choose(rng).expect("non-empty")));
    }
    s
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GenerateError {
    #[error("{requested} elements do not fit on the {rows}-row grid")]
    Capacity { requested: usize, rows: usize },
    #[error("a form needs at least one label/input pair, got {0} elements")]
    TooFewElements(usize),
    #[error("content mix is empty")]
    EmptyContentMix,
}

/// Generates a valid random form with `n_elements` elements.
///
/// Returns the specification and the initial value of every input element.
pub fn generate_random_form(
    seed: u64,
    n_elements: usize,
    content_mix: &BTreeSet<ContentClass>,
) -> Result<(FormSpecification, BTreeMap<String, String>), GenerateError> {
    if content_mix.is_empty() {
        return Err(GenerateError::EmptyContentMix);
    }
    if n_elements < 2 {
        return Err(GenerateError::TooFewElements(n_elements));
    }
    let pairs = n_elements / 2;
    let with_unit = n_elements % 2 == 1;
    if pairs > MAX_ROWS {
        return Err(GenerateError::Capacity { requested: n_elements, rows: MAX_ROWS });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mix: Vec<ContentClass> = content_mix.iter().copied().collect();
    let page_id = format!("Form {:06X}", rng.random_range(0..0x100_0000u32));

    let mut rows: Vec<usize> = (0..MAX_ROWS).collect();
    rows.shuffle(&mut rng);
    let mut rows = rows[..pairs].to_vec();
    rows.sort_unstable();
    let unit_row = with_unit.then(|| rng.random_range(0..pairs));

    let mut elements = Vec::with_capacity(n_elements);
    let mut initial = BTreeMap::new();
    for (i, &row) in rows.iter().enumerate() {
        let y = ROW_TOP + row as f64 * ROW_PITCH;
        let n = i + 1;
        let label_class = *mix.choose(&mut rng).expect("mix is not empty");
        let input_class = *mix.choose(&mut rng).expect("mix is not empty");
        elements.push(ElementSpec {
            id: format!("field{n}_label"),
            kind: ElementKind::Label,
            initial_value: label_class.sample(&mut rng, 4, 24),
            rect: Rect::new(LABEL_X, y, LABEL_W, ROW_HEIGHT),
        });
        let value = input_class.sample(&mut rng, 4, 24);
        let id = format!("field{n}_value");
        initial.insert(id.clone(), value.clone());
        let short = unit_row == Some(i);
        elements.push(ElementSpec {
            id,
            kind: ElementKind::Input,
            initial_value: value,
            rect: Rect::new(INPUT_X, y, if short { SHORT_INPUT_W } else { INPUT_W }, ROW_HEIGHT),
        });
        if short {
            let class = *mix.choose(&mut rng).expect("mix is not empty");
            elements.push(ElementSpec {
                id: format!("field{n}_unit"),
                kind: ElementKind::Label,
                initial_value: class.sample(&mut rng, 4, 6),
                rect: Rect::new(UNIT_X, y, UNIT_W, ROW_HEIGHT),
            });
        }
    }

    let spec = FormSpecification {
        page_id,
        ratio: (1280, 960),
        elements,
        policy: SupervisionPolicy::default(),
    };
    Ok((spec, initial))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formspec::{to_document, validate_spec, TITLE_RECT};
    use proptest::prelude::*;

    fn all() -> BTreeSet<ContentClass> {
        ContentClass::ALL.into_iter().collect()
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_random_form(1, 6, &all()).unwrap();
        let b = generate_random_form(1, 6, &all()).unwrap();
        assert_eq!(to_document(&a.0), to_document(&b.0));
        let c = generate_random_form(2, 6, &all()).unwrap();
        assert_ne!(to_document(&a.0), to_document(&c.0));
    }

    #[test]
    fn grid_capacity() {
        assert_eq!(MAX_ROWS, 8);
        assert!(generate_random_form(3, 17, &all()).is_ok());
        assert_eq!(
            generate_random_form(1, 200, &all()),
            Err(GenerateError::Capacity { requested: 200, rows: 8 })
        );
        assert_eq!(generate_random_form(1, 1, &all()), Err(GenerateError::TooFewElements(1)));
        assert_eq!(generate_random_form(1, 4, &BTreeSet::new()), Err(GenerateError::EmptyContentMix));
    }

    #[test]
    fn content_classes() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let n = ContentClass::Numeric.sample(&mut rng, 4, 24);
            assert!(n.chars().all(|c| c.is_ascii_digit()) && (4..=24).contains(&n.len()));
            let a = ContentClass::RandomAlpha.sample(&mut rng, 4, 24);
            assert!(a.chars().all(|c| c.is_ascii_alphabetic()));
            let w = ContentClass::EnglishWords.sample(&mut rng, 4, 24);
            assert!((4..=24).contains(&w.len()), "{w:?}");
            let i = iban_like(&mut rng);
            assert!((16..=24).contains(&i.len()));
            assert!(i.chars().all(|c| c.is_ascii_uppercase() || c.is_ascii_digit()));
        }
    }

    proptest! {
        #[test]
        fn generated_forms_are_valid(seed in any::<u64>(), n in 2usize..=17) {
            let (spec, initial) = generate_random_form(seed, n, &all()).unwrap();
            prop_assert_eq!(spec.elements.len(), n);
            prop_assert!(validate_spec(&spec).is_empty());
            prop_assert_eq!(initial.len(), spec.inputs().count());
            for e in &spec.elements {
                let r = e.rect;
                prop_assert!(r.x >= BORDER && r.y >= BORDER);
                prop_assert!(r.right() <= 100.0 - BORDER && r.bottom() <= 100.0 - BORDER);
                prop_assert!(!r.overlaps(&TITLE_RECT));
            }
            for input in spec.inputs() {
                let label = input.id.replace("_value", "_label");
                prop_assert!(spec.element(&label).is_some());
            }
        }
    }
}
