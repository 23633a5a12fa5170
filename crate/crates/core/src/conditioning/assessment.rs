use std::fmt;

use crate::numerics::{Scalar, Tensor};

use super::ConditioningError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Category {
    Saturation,
    Lighting,
    LightingTechnique,
    Focus,
    ShotType,
    Composition,
    CompositionTechnique,
}

impl Category {
    pub fn is_color(self) -> bool {
        matches!(
            self,
            Category::Saturation | Category::Lighting | Category::LightingTechnique
        )
    }
}

/// The closed attribute vocabulary, in rendering order.
pub const VOCABULARY: [(&str, Category); 20] = [
    ("undersaturated", Category::Saturation),
    ("well-saturated", Category::Saturation),
    ("oversaturated", Category::Saturation),
    ("poor light", Category::Lighting),
    ("balanced light", Category::Lighting),
    ("bright light", Category::Lighting),
    ("warm tone", Category::LightingTechnique),
    ("cool tone", Category::LightingTechnique),
    ("neutral tone", Category::LightingTechnique),
    ("sharp focus", Category::Focus),
    ("soft focus", Category::Focus),
    ("close-up", Category::ShotType),
    ("medium shot", Category::ShotType),
    ("wide shot", Category::ShotType),
    ("centered composition", Category::Composition),
    ("rule-of-thirds composition", Category::Composition),
    ("off-balance composition", Category::Composition),
    ("framing", Category::CompositionTechnique),
    ("symmetry", Category::CompositionTechnique),
    ("none", Category::CompositionTechnique),
];

/// Index into [`VOCABULARY`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Token(usize);

impl Token {
    pub fn parse(text: &str) -> Result<Token, ConditioningError> {
        VOCABULARY
            .iter()
            .position(|(t, _)| *t == text)
            .map(Token)
            .ok_or_else(|| ConditioningError::UnknownToken(text.to_owned()))
    }

    pub fn from_index(index: usize) -> Option<Token> {
        (index < VOCABULARY.len()).then_some(Token(index))
    }

    pub fn index(self) -> usize {
        self.0
    }

    pub fn text(self) -> &'static str {
        VOCABULARY[self.0].0
    }

    pub fn category(self) -> Category {
        VOCABULARY[self.0].1
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.text())
    }
}

/// Colour and structure attribute tokens of one image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Assessment {
    color: Vec<Token>,
    structure: Vec<Token>,
}

impl Assessment {
    pub fn new(color: Vec<Token>, structure: Vec<Token>) -> Result<Self, ConditioningError> {
        for t in &color {
            if !t.category().is_color() {
                return Err(ConditioningError::WrongGroup {
                    token: t.text().to_owned(),
                    group: "color",
                });
            }
        }
        for t in &structure {
            if t.category().is_color() {
                return Err(ConditioningError::WrongGroup {
                    token: t.text().to_owned(),
                    group: "structure",
                });
            }
        }
        Ok(Self { color, structure })
    }

    pub fn from_texts(color: &[&str], structure: &[&str]) -> Result<Self, ConditioningError> {
        let parse = |xs: &[&str]| xs.iter().map(|s| Token::parse(s)).collect::<Result<Vec<_>, _>>();
        Self::new(parse(color)?, parse(structure)?)
    }

    pub fn color(&self) -> &[Token] {
        &self.color
    }

    pub fn structure(&self) -> &[Token] {
        &self.structure
    }

    /// `Color: <token>; <token>. Structure: <token>; <token>.` with tokens in
    /// vocabulary order.
    pub fn render(&self) -> String {
        let join = |xs: &[Token]| {
            let mut xs = xs.to_vec();
            xs.sort();
            xs.iter().map(|t| t.text()).collect::<Vec<_>>().join("; ")
        };
        format!("Color: {}. Structure: {}.", join(&self.color), join(&self.structure))
    }

    /// Inverse of [`Assessment::render`].
    pub fn parse(s: &str) -> Result<Self, ConditioningError> {
        let malformed = || ConditioningError::Malformed(s.to_owned());
        let rest = s.strip_prefix("Color: ").ok_or_else(malformed)?;
        let (color, rest) = rest.split_once(". Structure: ").ok_or_else(malformed)?;
        let structure = rest.strip_suffix('.').ok_or_else(malformed)?;
        let split = |part: &str| -> Result<Vec<Token>, ConditioningError> {
            if part.is_empty() {
                return Ok(Vec::new());
            }
            part.split("; ").map(Token::parse).collect()
        };
        Self::new(split(color)?, split(structure)?)
    }

    /// Per-token weights for the mean embedding: each listed token adds `1/k`.
    pub fn bag_weights(tokens: &[Token]) -> [f64; VOCABULARY.len()] {
        let mut w = [0.0; VOCABULARY.len()];
        if tokens.is_empty() {
            return w;
        }
        let share = 1.0 / tokens.len() as f64;
        for t in tokens {
            w[t.index()] += share;
        }
        w
    }
}

impl fmt::Display for Assessment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

/// Mean token embeddings `(colour, structure)` from a `[vocabulary, width]`
/// table. Summation runs in vocabulary order, so the result does not depend
/// on token order.
pub fn encode_assessment<S: Scalar>(
    a: &Assessment,
    table: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>), ConditioningError> {
    if table.rank() != 2 || table.shape()[0] != VOCABULARY.len() {
        return Err(ConditioningError::Size {
            what: "attribute embedding table",
            expected: vec![VOCABULARY.len(), 0],
            got: table.shape().to_vec(),
        });
    }
    let width = table.shape()[1];
    let mean = |tokens: &[Token]| {
        let w = Assessment::bag_weights(tokens);
        let mut out = vec![S::zero(); width];
        for (row, &wi) in table.data().chunks(width).zip(&w) {
            if wi == 0.0 {
                continue;
            }
            let wi = S::of(wi);
            for (o, &r) in out.iter_mut().zip(row) {
                *o = *o + wi * r;
            }
        }
        Tensor::new(vec![width], out).expect("width is positive")
    };
    Ok((mean(&a.color), mean(&a.structure)))
}
