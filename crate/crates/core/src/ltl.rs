//! LTL_f syntax: predicates, formulas, postorder token sequences and the
//! syntactic-validity continuation sets used by the constrained decoder.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LtlError {
    #[error("malformed postorder sequence: {0}")]
    MalformedSequence(String),
    #[error("unknown token `{0}`")]
    UnknownToken(String),
    #[error("formula already contains a closer relation atom")]
    AlreadyRewritten,
}

/// The nine domain predicates, in alphabetical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Predicate {
    Apple,
    CloserApple,
    CloserOrange,
    CloserPear,
    Flag,
    House,
    Orange,
    Pear,
    Tree,
}

/// Coarse role of a predicate in the world.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredicateKind {
    Object,
    Relation,
    Destination,
}

impl Predicate {
    pub const ALL: [Predicate; 9] = [
        Predicate::Apple,
        Predicate::CloserApple,
        Predicate::CloserOrange,
        Predicate::CloserPear,
        Predicate::Flag,
        Predicate::House,
        Predicate::Orange,
        Predicate::Pear,
        Predicate::Tree,
    ];

    pub const OBJECTS: [Predicate; 3] = [Predicate::Apple, Predicate::Orange, Predicate::Pear];
    pub const DESTINATIONS: [Predicate; 3] = [Predicate::Flag, Predicate::House, Predicate::Tree];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Predicate> {
        Self::ALL.get(i).copied()
    }

    pub fn kind(self) -> PredicateKind {
        match self {
            Predicate::Apple | Predicate::Orange | Predicate::Pear => PredicateKind::Object,
            Predicate::CloserApple | Predicate::CloserOrange | Predicate::CloserPear => PredicateKind::Relation,
            Predicate::Flag | Predicate::House | Predicate::Tree => PredicateKind::Destination,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Predicate::Apple => "APPLE",
            Predicate::CloserApple => "CLOSER_APPLE",
            Predicate::CloserOrange => "CLOSER_ORANGE",
            Predicate::CloserPear => "CLOSER_PEAR",
            Predicate::Flag => "FLAG",
            Predicate::House => "HOUSE",
            Predicate::Orange => "ORANGE",
            Predicate::Pear => "PEAR",
            Predicate::Tree => "TREE",
        }
    }

    /// The closer-relation predicate for an object, if any.
    pub fn closer(self) -> Option<Predicate> {
        match self {
            Predicate::Apple => Some(Predicate::CloserApple),
            Predicate::Orange => Some(Predicate::CloserOrange),
            Predicate::Pear => Some(Predicate::CloserPear),
            _ => None,
        }
    }

    /// The object a closer-relation refers to.
    pub fn closer_target(self) -> Option<Predicate> {
        match self {
            Predicate::CloserApple => Some(Predicate::Apple),
            Predicate::CloserOrange => Some(Predicate::Orange),
            Predicate::CloserPear => Some(Predicate::Pear),
            _ => None,
        }
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Predicate {
    type Err = LtlError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Predicate::ALL
            .iter()
            .copied()
            .find(|p| p.name() == s)
            .ok_or_else(|| LtlError::UnknownToken(s.to_string()))
    }
}

/// Output alphabet of the parser: 14 formula symbols plus EOS, ordered
/// alphabetically so indices are stable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Token {
    Always,
    And,
    Apple,
    CloserApple,
    CloserOrange,
    CloserPear,
    Eos,
    Eventually,
    Flag,
    House,
    Or,
    Orange,
    Pear,
    Tree,
    Until,
}

/// Number of decoder output classes (including EOS).
pub const NUM_TOKENS: usize = 15;
/// Embedding row used as the decoder's start-of-sequence input.
pub const BOS_INDEX: usize = NUM_TOKENS;

impl Token {
    pub const ALL: [Token; NUM_TOKENS] = [
        Token::Always,
        Token::And,
        Token::Apple,
        Token::CloserApple,
        Token::CloserOrange,
        Token::CloserPear,
        Token::Eos,
        Token::Eventually,
        Token::Flag,
        Token::House,
        Token::Or,
        Token::Orange,
        Token::Pear,
        Token::Tree,
        Token::Until,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Token> {
        Self::ALL.get(i).copied()
    }

    pub fn atom(p: Predicate) -> Token {
        match p {
            Predicate::Apple => Token::Apple,
            Predicate::CloserApple => Token::CloserApple,
            Predicate::CloserOrange => Token::CloserOrange,
            Predicate::CloserPear => Token::CloserPear,
            Predicate::Flag => Token::Flag,
            Predicate::House => Token::House,
            Predicate::Orange => Token::Orange,
            Predicate::Pear => Token::Pear,
            Predicate::Tree => Token::Tree,
        }
    }

    pub fn predicate(self) -> Option<Predicate> {
        Some(match self {
            Token::Apple => Predicate::Apple,
            Token::CloserApple => Predicate::CloserApple,
            Token::CloserOrange => Predicate::CloserOrange,
            Token::CloserPear => Predicate::CloserPear,
            Token::Flag => Predicate::Flag,
            Token::House => Predicate::House,
            Token::Orange => Predicate::Orange,
            Token::Pear => Predicate::Pear,
            Token::Tree => Predicate::Tree,
            _ => return None,
        })
    }

    /// Operands consumed from the stack; `None` for EOS.
    pub fn arity(self) -> Option<usize> {
        match self {
            Token::Eos => None,
            Token::And | Token::Or | Token::Until => Some(2),
            Token::Eventually | Token::Always => Some(1),
            _ => Some(0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Token::Always => "ALWAYS",
            Token::And => "AND",
            Token::Eos => "EOS",
            Token::Eventually => "EVENTUALLY",
            Token::Or => "OR",
            Token::Until => "UNTIL",
            other => other.predicate().map(Predicate::name).unwrap_or("?"),
        }
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Token {
    type Err = LtlError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Token::ALL
            .iter()
            .copied()
            .find(|t| t.name() == s)
            .ok_or_else(|| LtlError::UnknownToken(s.to_string()))
    }
}

/// LTL_f formula without negation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Formula {
    Atom(Predicate),
    And(Box<Formula>, Box<Formula>),
    Or(Box<Formula>, Box<Formula>),
    Eventually(Box<Formula>),
    Always(Box<Formula>),
    Until(Box<Formula>, Box<Formula>),
}

impl Formula {
    pub fn atom(p: Predicate) -> Formula {
        Formula::Atom(p)
    }

    pub fn and(a: Formula, b: Formula) -> Formula {
        Formula::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: Formula, b: Formula) -> Formula {
        Formula::Or(Box::new(a), Box::new(b))
    }

    pub fn eventually(a: Formula) -> Formula {
        Formula::Eventually(Box::new(a))
    }

    pub fn always(a: Formula) -> Formula {
        Formula::Always(Box::new(a))
    }

    pub fn until(a: Formula, b: Formula) -> Formula {
        Formula::Until(Box::new(a), Box::new(b))
    }

    /// Number of AST nodes, equal to the postorder length.
    pub fn len(&self) -> usize {
        match self {
            Formula::Atom(_) => 1,
            Formula::Eventually(a) | Formula::Always(a) => 1 + a.len(),
            Formula::And(a, b) | Formula::Or(a, b) | Formula::Until(a, b) => 1 + a.len() + b.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Atoms occurring in the formula, sorted and deduplicated.
    pub fn support(&self) -> Vec<Predicate> {
        let mut out = Vec::new();
        self.collect_atoms(&mut out);
        out.sort();
        out.dedup();
        out
    }

    fn collect_atoms(&self, out: &mut Vec<Predicate>) {
        match self {
            Formula::Atom(p) => out.push(*p),
            Formula::Eventually(a) | Formula::Always(a) => a.collect_atoms(out),
            Formula::And(a, b) | Formula::Or(a, b) | Formula::Until(a, b) => {
                a.collect_atoms(out);
                b.collect_atoms(out);
            }
        }
    }

    pub fn to_tokens(&self) -> Vec<Token> {
        let mut out = Vec::with_capacity(self.len());
        self.push_postorder(&mut out);
        out
    }

    fn push_postorder(&self, out: &mut Vec<Token>) {
        match self {
            Formula::Atom(p) => out.push(Token::atom(*p)),
            Formula::Eventually(a) => {
                a.push_postorder(out);
                out.push(Token::Eventually);
            }
            Formula::Always(a) => {
                a.push_postorder(out);
                out.push(Token::Always);
            }
            Formula::And(a, b) => {
                a.push_postorder(out);
                b.push_postorder(out);
                out.push(Token::And);
            }
            Formula::Or(a, b) => {
                a.push_postorder(out);
                b.push_postorder(out);
                out.push(Token::Or);
            }
            Formula::Until(a, b) => {
                a.push_postorder(out);
                b.push_postorder(out);
                out.push(Token::Until);
            }
        }
    }

    /// Space-separated postorder text, e.g. `FLAG ORANGE OR EVENTUALLY ALWAYS`.
    pub fn to_postorder_string(&self) -> String {
        join_tokens(&self.to_tokens())
    }

    pub fn parse_postorder(text: &str) -> Result<Formula, LtlError> {
        let tokens = text
            .split_whitespace()
            .map(Token::from_str)
            .collect::<Result<Vec<_>, _>>()?;
        decode_postorder(&tokens)
    }

    /// Infix rendering with explicit parentheses.
    pub fn to_infix(&self) -> String {
        match self {
            Formula::Atom(p) => p.name().to_string(),
            Formula::Eventually(a) => format!("◇{}", a.to_infix_operand()),
            Formula::Always(a) => format!("□{}", a.to_infix_operand()),
            Formula::And(a, b) => format!("({} ∧ {})", a.to_infix(), b.to_infix()),
            Formula::Or(a, b) => format!("({} ∨ {})", a.to_infix(), b.to_infix()),
            Formula::Until(a, b) => format!("({} U {})", a.to_infix(), b.to_infix()),
        }
    }

    fn to_infix_operand(&self) -> String {
        self.to_infix()
    }

    /// Replace each object atom `p` with `CLOSER_p U p`. Destination atoms are
    /// left unchanged.
    pub fn rewrite_closer(&self) -> Result<Formula, LtlError> {
        Ok(match self {
            Formula::Atom(p) => match p.kind() {
                PredicateKind::Relation => return Err(LtlError::AlreadyRewritten),
                PredicateKind::Object => {
                    let closer = p.closer().expect("objects have a closer relation");
                    Formula::until(Formula::Atom(closer), Formula::Atom(*p))
                }
                PredicateKind::Destination => Formula::Atom(*p),
            },
            Formula::Eventually(a) => Formula::eventually(a.rewrite_closer()?),
            Formula::Always(a) => Formula::always(a.rewrite_closer()?),
            Formula::And(a, b) => Formula::and(a.rewrite_closer()?, b.rewrite_closer()?),
            Formula::Or(a, b) => Formula::or(a.rewrite_closer()?, b.rewrite_closer()?),
            Formula::Until(a, b) => Formula::until(a.rewrite_closer()?, b.rewrite_closer()?),
        })
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_infix())
    }
}

pub fn join_tokens(tokens: &[Token]) -> String {
    tokens.iter().map(|t| t.name()).collect::<Vec<_>>().join(" ")
}

pub fn parse_tokens(text: &str) -> Result<Vec<Token>, LtlError> {
    text.split_whitespace().map(Token::from_str).collect()
}

/// Postorder encoding of `f`.
pub fn encode_postorder(f: &Formula) -> Vec<Token> {
    f.to_tokens()
}

/// Decode a postorder token sequence. A trailing EOS is accepted and ignored;
/// EOS anywhere else is malformed.
pub fn decode_postorder(tokens: &[Token]) -> Result<Formula, LtlError> {
    let body = match tokens.split_last() {
        Some((Token::Eos, rest)) => rest,
        _ => tokens,
    };
    let mut stack: Vec<Formula> = Vec::new();
    for (pos, &tok) in body.iter().enumerate() {
        let underflow = || LtlError::MalformedSequence(format!("stack underflow at position {pos} ({tok})"));
        let node = match tok {
            Token::Eos => return Err(LtlError::MalformedSequence(format!("EOS at position {pos}"))),
            Token::Eventually => Formula::eventually(stack.pop().ok_or_else(underflow)?),
            Token::Always => Formula::always(stack.pop().ok_or_else(underflow)?),
            Token::And | Token::Or | Token::Until => {
                let rhs = stack.pop().ok_or_else(underflow)?;
                let lhs = stack.pop().ok_or_else(underflow)?;
                match tok {
                    Token::And => Formula::and(lhs, rhs),
                    Token::Or => Formula::or(lhs, rhs),
                    _ => Formula::until(lhs, rhs),
                }
            }
            atom => Formula::Atom(atom.predicate().expect("remaining tokens are atoms")),
        };
        stack.push(node);
    }
    if stack.len() != 1 {
        return Err(LtlError::MalformedSequence(format!(
            "final stack depth {} (expected 1)",
            stack.len()
        )));
    }
    Ok(stack.pop().unwrap())
}

/// Stack depth after consuming `prefix`, or `None` if it underflows or
/// contains EOS.
pub fn stack_depth(prefix: &[Token]) -> Option<usize> {
    let mut depth = 0usize;
    for &t in prefix {
        let a = t.arity()?;
        if depth < a {
            return None;
        }
        depth = depth - a + 1;
    }
    Some(depth)
}

/// Minimum number of further tokens needed to close a prefix at `depth`.
pub fn min_completion(depth: usize) -> usize {
    if depth == 0 {
        1
    } else {
        depth - 1
    }
}

/// Tokens allowed after a prefix at stack depth `depth` with `budget` tokens
/// left (the candidate itself consumes one). EOS is allowed iff `depth == 1`.
pub fn continuations_at_depth(depth: usize, budget: usize) -> Vec<Token> {
    Token::ALL
        .iter()
        .copied()
        .filter(|&t| match t.arity() {
            None => depth == 1,
            Some(a) => budget >= 1 && depth >= a && min_completion(depth - a + 1) < budget,
        })
        .collect()
}

/// Bitmask (by token index) form of [`continuations_at_depth`].
pub fn continuation_mask(depth: usize, budget: usize) -> [bool; NUM_TOKENS] {
    let mut mask = [false; NUM_TOKENS];
    for t in continuations_at_depth(depth, budget) {
        mask[t.index()] = true;
    }
    mask
}

/// Valid next tokens for `prefix` given `remaining_budget` non-EOS tokens.
/// Returns an empty set if the prefix is already invalid.
pub fn valid_continuations(prefix: &[Token], remaining_budget: usize) -> Vec<Token> {
    match stack_depth(prefix) {
        Some(d) => continuations_at_depth(d, remaining_budget),
        None => Vec::new(),
    }
}

pub fn formula_length(f: &Formula) -> usize {
    f.len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use Predicate::*;

    fn a(p: Predicate) -> Formula {
        Formula::atom(p)
    }

    #[test]
    fn exactly_nine_unique_predicates() {
        let mut names: Vec<_> = Predicate::ALL.iter().map(|p| p.name()).collect();
        names.dedup();
        assert_eq!(names.len(), 9);
        assert!(names
            .iter()
            .all(|n| n.chars().all(|c| c.is_ascii_uppercase() || c == '_')));
        for (i, p) in Predicate::ALL.iter().enumerate() {
            assert_eq!(p.index(), i);
        }
    }

    #[test]
    fn token_alphabet_sorted() {
        let names: Vec<_> = Token::ALL.iter().map(|t| t.name()).collect();
        let mut sorted = names.clone();
        sorted.sort();
        assert_eq!(names, sorted);
    }

    #[test]
    fn encode_examples() {
        let f = Formula::always(Formula::eventually(Formula::or(a(Flag), a(Orange))));
        assert_eq!(f.to_postorder_string(), "FLAG ORANGE OR EVENTUALLY ALWAYS");
        assert_eq!(encode_postorder(&a(Apple)), vec![Token::Apple]);
        let u = Formula::until(a(CloserApple), a(Apple));
        assert_eq!(
            encode_postorder(&u),
            vec![Token::CloserApple, Token::Apple, Token::Until]
        );
    }

    #[test]
    fn decode_examples() {
        assert_eq!(
            decode_postorder(&[Token::Flag, Token::Orange, Token::Or]).unwrap(),
            Formula::or(a(Flag), a(Orange))
        );
        assert!(matches!(
            decode_postorder(&[Token::And, Token::And]),
            Err(LtlError::MalformedSequence(_))
        ));
        assert!(matches!(
            decode_postorder(&[Token::Apple, Token::Pear]),
            Err(LtlError::MalformedSequence(_))
        ));
        assert!(decode_postorder(&[]).is_err());
        assert!(decode_postorder(&[Token::Apple, Token::Eos]).is_ok());
        assert!(decode_postorder(&[Token::Eos, Token::Apple]).is_err());
    }

    #[test]
    fn continuation_examples() {
        let atoms: Vec<Token> = Predicate::ALL.iter().map(|&p| Token::atom(p)).collect();
        assert_eq!(valid_continuations(&[], 1), atoms);

        let mut after_atom = valid_continuations(&[Token::Apple], 2);
        after_atom.sort();
        let mut expected = atoms.clone();
        expected.extend([Token::Eventually, Token::Always, Token::Eos]);
        expected.sort();
        assert_eq!(after_atom, expected);

        assert_eq!(
            valid_continuations(&[Token::Apple, Token::Pear], 1),
            vec![Token::And, Token::Or, Token::Until]
        );
        // complete prefix with no budget left may only stop
        assert_eq!(valid_continuations(&[Token::Apple], 0), vec![Token::Eos]);
    }

    #[test]
    fn rewrite_examples() {
        let f = Formula::always(a(Apple));
        assert_eq!(
            f.rewrite_closer().unwrap(),
            Formula::always(Formula::until(a(CloserApple), a(Apple)))
        );
        let g = Formula::eventually(Formula::and(a(Apple), a(Pear)));
        assert_eq!(
            g.rewrite_closer().unwrap(),
            Formula::eventually(Formula::and(
                Formula::until(a(CloserApple), a(Apple)),
                Formula::until(a(CloserPear), a(Pear))
            ))
        );
        assert_eq!(
            Formula::always(a(Tree)).rewrite_closer().unwrap(),
            Formula::always(a(Tree))
        );
        assert_eq!(
            Formula::eventually(a(CloserPear)).rewrite_closer(),
            Err(LtlError::AlreadyRewritten)
        );
    }

    #[test]
    fn lengths_and_support() {
        assert_eq!(formula_length(&a(Apple)), 1);
        assert_eq!(formula_length(&Formula::always(Formula::eventually(a(Flag)))), 3);
        let f = Formula::until(Formula::and(a(Apple), a(Pear)), a(Tree));
        assert_eq!(formula_length(&f), 5);
        assert_eq!(f.support(), vec![Apple, Pear, Tree]);
        assert_eq!(Formula::always(Formula::eventually(a(Flag))).support(), vec![Flag]);
        assert_eq!(Formula::or(a(Apple), a(Apple)).support(), vec![Apple]);
    }

    #[test]
    fn text_round_trip() {
        let f = Formula::parse_postorder("FLAG ORANGE OR EVENTUALLY ALWAYS").unwrap();
        assert_eq!(f.to_postorder_string(), "FLAG ORANGE OR EVENTUALLY ALWAYS");
        assert_eq!(f.to_infix(), "□◇(FLAG ∨ ORANGE)");
        assert!(Formula::parse_postorder("FLAG BANANA").is_err());
    }
}
