//! Restricted WHERE-clause grammar and query encoding.
//!
//! Grammar (EBNF):
//! ```text
//! where   := [ pred { AND pred } ]
//! pred    := ident '=' literal
//! literal := number | string
//! string  := "'" { char | "''" } "'"
//! ```
//! `AND` is case-insensitive. Anything else (OR, NOT, comparisons,
//! parentheses) makes the query non-primitive; disjunctions are handled
//! separately by [`rewrite_disjunction`].

use crate::error::{Error, Result};
use crate::schema::{AttrKind, Schema};

/// Literal on the right-hand side of an equality predicate.
#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Str(String),
    /// Numeric literal; the original lexeme is kept so categorical columns
    /// with number-like tokens can still be matched verbatim.
    Num { text: String, value: f64 },
}

impl Literal {
    pub fn token_text(&self) -> &str {
        match self {
            Literal::Str(s) => s,
            Literal::Num { text, .. } => text,
        }
    }
}

/// One equality predicate, resolved against a schema.
#[derive(Debug, Clone, PartialEq)]
pub struct Predicate {
    pub attr_index: usize,
    pub attr_name: String,
    pub literal: Literal,
}

/// A conjunction of equality predicates, at most one per attribute,
/// stored sorted by schema position.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PrimitiveQuery {
    predicates: Vec<Predicate>,
}

impl PrimitiveQuery {
    pub fn empty() -> Self {
        PrimitiveQuery::default()
    }

    pub fn from_predicates(mut predicates: Vec<Predicate>) -> Result<Self> {
        predicates.sort_by_key(|p| p.attr_index);
        for w in predicates.windows(2) {
            if w[0].attr_index == w[1].attr_index {
                return Err(Error::DuplicateAttribute(w[1].attr_name.clone()));
            }
        }
        Ok(PrimitiveQuery { predicates })
    }

    pub fn predicates(&self) -> &[Predicate] {
        &self.predicates
    }

    pub fn is_empty(&self) -> bool {
        self.predicates.is_empty()
    }

    /// Pretty-printed WHERE body; parsing it back yields an equal query.
    pub fn text(&self) -> String {
        let parts: Vec<String> = self
            .predicates
            .iter()
            .map(|p| match &p.literal {
                Literal::Str(s) => format!("{} = '{}'", p.attr_name, s.replace('\'', "''")),
                Literal::Num { text, .. } => format!("{} = {}", p.attr_name, text),
            })
            .collect();
        parts.join(" AND ")
    }

    /// Cache key: attributes in schema order, numeric literals rendered by
    /// their bin so two spellings of the same selection collide.
    pub fn canonical_key(&self, schema: &Schema) -> Result<String> {
        let mut parts = Vec::with_capacity(self.predicates.len());
        for p in &self.predicates {
            let attr = &schema.attrs[p.attr_index];
            let rendered = match (&attr.kind, &p.literal) {
                (AttrKind::Numerical, Literal::Num { value, .. }) => {
                    let rule = attr
                        .binning
                        .as_ref()
                        .ok_or_else(|| Error::MissingBinning(attr.name.clone()))?;
                    format!("{}=#{}", attr.name, rule.apply(*value)?)
                }
                (_, lit) => format!("{}='{}'", attr.name, lit.token_text()),
            };
            parts.push(rendered);
        }
        Ok(parts.join(" AND "))
    }
}

/// Length-M categorical vector feeding the gating network; absent
/// predicates carry the attribute's default token.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct QueryEncoding {
    pub ids: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Ident(String),
    Str(String),
    Num(String, f64),
    Eq,
    LParen,
    RParen,
    And,
    Or,
    Not,
    Cmp(String),
}

fn token_display(t: &Token) -> String {
    match t {
        Token::Ident(s) => s.clone(),
        Token::Str(s) => format!("'{s}'"),
        Token::Num(s, _) => s.clone(),
        Token::Eq => "=".into(),
        Token::LParen => "(".into(),
        Token::RParen => ")".into(),
        Token::And => "AND".into(),
        Token::Or => "OR".into(),
        Token::Not => "NOT".into(),
        Token::Cmp(s) => s.clone(),
    }
}

fn tokenize(text: &str) -> Result<Vec<(Token, usize)>> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        match c {
            '=' => {
                out.push((Token::Eq, start));
                i += 1;
            }
            '(' => {
                out.push((Token::LParen, start));
                i += 1;
            }
            ')' => {
                out.push((Token::RParen, start));
                i += 1;
            }
            '<' | '>' | '!' => {
                let mut op = String::from(c);
                if i + 1 < bytes.len() && matches!(bytes[i + 1] as char, '=' | '>') {
                    op.push(bytes[i + 1] as char);
                    i += 1;
                }
                out.push((Token::Cmp(op), start));
                i += 1;
            }
            '\'' => {
                // Scanning for the quote byte is UTF-8 safe (continuation
                // bytes are >= 0x80); copy whole segments between escapes.
                let mut s = String::new();
                i += 1;
                let mut seg_start = i;
                loop {
                    if i >= bytes.len() {
                        return Err(Error::Parse {
                            offset: start,
                            msg: "unterminated string literal".into(),
                        });
                    }
                    if bytes[i] == b'\'' {
                        s.push_str(&text[seg_start..i]);
                        if i + 1 < bytes.len() && bytes[i + 1] == b'\'' {
                            s.push('\'');
                            i += 2;
                            seg_start = i;
                            continue;
                        }
                        i += 1;
                        break;
                    }
                    i += 1;
                }
                out.push((Token::Str(s), start));
            }
            _ if c.is_ascii_digit() || c == '-' || c == '+' || c == '.' => {
                let mut j = i + 1;
                while j < bytes.len()
                    && matches!(bytes[j] as char, '0'..='9' | '.' | 'e' | 'E' | '+' | '-')
                {
                    // Only accept +/- right after an exponent marker.
                    if matches!(bytes[j] as char, '+' | '-')
                        && !matches!(bytes[j - 1] as char, 'e' | 'E')
                    {
                        break;
                    }
                    j += 1;
                }
                let lex = &text[i..j];
                let value = lex.parse::<f64>().map_err(|_| Error::Parse {
                    offset: start,
                    msg: format!("invalid numeric literal '{lex}'"),
                })?;
                out.push((Token::Num(lex.to_string(), value), start));
                i = j;
            }
            _ if c.is_ascii_alphabetic() || c == '_' => {
                let mut j = i + 1;
                while j < bytes.len()
                    && ((bytes[j] as char).is_ascii_alphanumeric() || bytes[j] == b'_')
                {
                    j += 1;
                }
                let word = &text[i..j];
                let tok = if word.eq_ignore_ascii_case("and") {
                    Token::And
                } else if word.eq_ignore_ascii_case("or") {
                    Token::Or
                } else if word.eq_ignore_ascii_case("not") {
                    Token::Not
                } else {
                    Token::Ident(word.to_string())
                };
                out.push((tok, start));
                i = j;
            }
            _ => {
                return Err(Error::Parse {
                    offset: start,
                    msg: format!("unexpected character '{c}'"),
                })
            }
        }
    }
    Ok(out)
}

fn parse_tokens(tokens: &[(Token, usize)], schema: &Schema) -> Result<PrimitiveQuery> {
    if tokens.is_empty() {
        return Ok(PrimitiveQuery::empty());
    }
    let mut predicates = Vec::new();
    let mut pos = 0;
    loop {
        // ident
        let (ident, ident_off) = match tokens.get(pos) {
            Some((Token::Ident(name), off)) => (name.clone(), *off),
            Some((t @ (Token::Or | Token::Not | Token::LParen | Token::RParen | Token::Cmp(_)), off)) => {
                return Err(Error::NonPrimitive {
                    token: token_display(t),
                    offset: *off,
                })
            }
            Some((t, off)) => {
                return Err(Error::Parse {
                    offset: *off,
                    msg: format!("expected attribute name, found '{}'", token_display(t)),
                })
            }
            None => {
                return Err(Error::Parse {
                    offset: 0,
                    msg: "expected attribute name, found end of input".into(),
                })
            }
        };
        pos += 1;
        // '='
        match tokens.get(pos) {
            Some((Token::Eq, _)) => pos += 1,
            Some((t @ Token::Cmp(_), off)) => {
                return Err(Error::NonPrimitive {
                    token: token_display(t),
                    offset: *off,
                })
            }
            Some((t, off)) => {
                return Err(Error::Parse {
                    offset: *off,
                    msg: format!("expected '=', found '{}'", token_display(t)),
                })
            }
            None => {
                return Err(Error::Parse {
                    offset: ident_off,
                    msg: "expected '=' after attribute name".into(),
                })
            }
        }
        // literal
        let literal = match tokens.get(pos) {
            Some((Token::Str(s), _)) => Literal::Str(s.clone()),
            Some((Token::Num(text, value), _)) => Literal::Num {
                text: text.clone(),
                value: *value,
            },
            Some((t, off)) => {
                return Err(Error::Parse {
                    offset: *off,
                    msg: format!("expected literal, found '{}'", token_display(t)),
                })
            }
            None => {
                return Err(Error::Parse {
                    offset: ident_off,
                    msg: "expected literal after '='".into(),
                })
            }
        };
        pos += 1;

        let attr_index = schema
            .attr_index(&ident)
            .ok_or_else(|| Error::UnknownAttribute(ident.clone()))?;
        let attr = &schema.attrs[attr_index];
        if attr.kind == AttrKind::Numerical && matches!(literal, Literal::Str(_)) {
            return Err(Error::TypeMismatch(format!(
                "string literal for numeric attribute '{}'",
                attr.name
            )));
        }
        predicates.push(Predicate {
            attr_index,
            attr_name: attr.name.clone(),
            literal,
        });

        match tokens.get(pos) {
            None => break,
            Some((Token::And, _)) => pos += 1,
            Some((t @ (Token::Or | Token::Not | Token::LParen | Token::RParen | Token::Cmp(_)), off)) => {
                return Err(Error::NonPrimitive {
                    token: token_display(t),
                    offset: *off,
                })
            }
            Some((t, off)) => {
                return Err(Error::Parse {
                    offset: *off,
                    msg: format!("expected AND, found '{}'", token_display(t)),
                })
            }
        }
    }
    PrimitiveQuery::from_predicates(predicates)
}

/// Parse a WHERE-clause body into a [`PrimitiveQuery`].
pub fn parse_where(text: &str, schema: &Schema) -> Result<PrimitiveQuery> {
    parse_tokens(&tokenize(text)?, schema)
}

/// Split a flat disjunction of primitive conjunctions (one optional level
/// of parentheses per disjunct) into individual queries, order preserved.
pub fn rewrite_disjunction(text: &str, schema: &Schema) -> Result<Vec<PrimitiveQuery>> {
    let tokens = tokenize(text)?;
    if tokens.is_empty() {
        return Ok(vec![PrimitiveQuery::empty()]);
    }
    let mut groups: Vec<Vec<(Token, usize)>> = vec![Vec::new()];
    let mut depth = 0usize;
    for (tok, off) in tokens {
        match tok {
            Token::LParen => {
                depth += 1;
                if depth > 1 {
                    return Err(Error::NonPrimitive {
                        token: "(".into(),
                        offset: off,
                    });
                }
                groups.last_mut().unwrap().push((tok, off));
            }
            Token::RParen => {
                if depth == 0 {
                    return Err(Error::Parse {
                        offset: off,
                        msg: "unbalanced ')'".into(),
                    });
                }
                depth -= 1;
                groups.last_mut().unwrap().push((tok, off));
            }
            Token::Or if depth == 0 => groups.push(Vec::new()),
            _ => groups.last_mut().unwrap().push((tok, off)),
        }
    }
    if depth != 0 {
        return Err(Error::Parse {
            offset: text.len(),
            msg: "unbalanced '('".into(),
        });
    }

    let mut queries = Vec::with_capacity(groups.len());
    for mut group in groups {
        // Strip a parenthesis pair that encloses the whole disjunct.
        if group.first().map(|(t, _)| t) == Some(&Token::LParen)
            && group.last().map(|(t, _)| t) == Some(&Token::RParen)
        {
            group = group[1..group.len() - 1].to_vec();
        }
        queries.push(parse_tokens(&group, schema)?);
    }
    Ok(queries)
}

/// Encode a query as the length-M id vector consumed by the gating network.
///
/// Categorical literals resolve to their domain id (or the shared OOV id),
/// numeric literals to their bin id; attributes without a predicate get
/// their default token.
pub fn encode_query(query: &PrimitiveQuery, schema: &Schema) -> Result<QueryEncoding> {
    let mut ids: Vec<usize> = schema.attrs.iter().map(|a| a.default_token()).collect();
    for p in query.predicates() {
        let attr = &schema.attrs[p.attr_index];
        ids[p.attr_index] = match (&attr.kind, &p.literal) {
            (AttrKind::Categorical, lit) => attr
                .token_id(lit.token_text())
                .unwrap_or_else(|| attr.oov_id()),
            (AttrKind::Numerical, Literal::Num { value, .. }) => {
                let rule = attr
                    .binning
                    .as_ref()
                    .ok_or_else(|| Error::MissingBinning(attr.name.clone()))?;
                rule.apply(*value)?
            }
            (AttrKind::Numerical, Literal::Str(_)) => {
                return Err(Error::TypeMismatch(format!(
                    "string literal for numeric attribute '{}'",
                    attr.name
                )))
            }
        };
    }
    Ok(QueryEncoding { ids })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{AttributeSpec, BinningRule};

    fn test_schema() -> Schema {
        let mut age = AttributeSpec::numerical("age", (18.0, 90.0));
        age.binning = Some(BinningRule::new(vec![25.0, 40.0, 60.0]).unwrap());
        Schema {
            attrs: vec![
                AttributeSpec::categorical("gender", vec!["M".into(), "F".into()]),
                age,
                AttributeSpec::categorical(
                    "location",
                    vec!["NYC".into(), "LA".into(), "SF".into()],
                ),
            ],
            label: "label".into(),
        }
    }

    #[test]
    fn parses_conjunction() {
        let s = test_schema();
        let q = parse_where("gender = 'M' AND age = 24 AND location = 'NYC'", &s).unwrap();
        assert_eq!(q.predicates().len(), 3);
        assert_eq!(q.predicates()[0].attr_name, "gender");
        assert_eq!(q.predicates()[1].attr_name, "age");
    }

    #[test]
    fn or_is_non_primitive() {
        let s = test_schema();
        let err = parse_where("age = 24 OR gender = 'M'", &s).unwrap_err();
        match err {
            Error::NonPrimitive { token, offset } => {
                assert_eq!(token, "OR");
                assert_eq!(offset, 9);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn comparison_is_non_primitive() {
        let s = test_schema();
        assert!(matches!(
            parse_where("age > 24", &s),
            Err(Error::NonPrimitive { .. })
        ));
        assert!(matches!(
            parse_where("NOT gender = 'M'", &s),
            Err(Error::NonPrimitive { .. })
        ));
    }

    #[test]
    fn empty_where_is_zero_predicates() {
        let s = test_schema();
        let q = parse_where("   ", &s).unwrap();
        assert!(q.is_empty());
        assert_eq!(q.text(), "");
    }

    #[test]
    fn unknown_duplicate_and_type_errors() {
        let s = test_schema();
        assert!(matches!(
            parse_where("height = 2", &s),
            Err(Error::UnknownAttribute(_))
        ));
        assert!(matches!(
            parse_where("age = 24 AND age = 30", &s),
            Err(Error::DuplicateAttribute(_))
        ));
        assert!(matches!(
            parse_where("age = 'old'", &s),
            Err(Error::TypeMismatch(_))
        ));
    }

    #[test]
    fn attribute_names_case_insensitive() {
        let s = test_schema();
        let q = parse_where("GENDER = 'M'", &s).unwrap();
        assert_eq!(q.predicates()[0].attr_name, "gender");
        // literals stay case-sensitive: 'm' is OOV, not 'M'
        let q2 = parse_where("gender = 'm'", &s).unwrap();
        let e2 = encode_query(&q2, &s).unwrap();
        assert_eq!(e2.ids[0], s.attrs[0].oov_id());
    }

    #[test]
    fn rewrite_splits_disjunction() {
        let s = test_schema();
        let qs = rewrite_disjunction("(gender='M') OR (gender='F')", &s).unwrap();
        assert_eq!(qs.len(), 2);
        let qs = rewrite_disjunction("gender='M'", &s).unwrap();
        assert_eq!(qs.len(), 1);
        let qs =
            rewrite_disjunction("(gender='M' AND age=24) OR (location='LA')", &s).unwrap();
        assert_eq!(qs[0].predicates().len(), 2);
        assert_eq!(qs[1].predicates().len(), 1);
    }

    #[test]
    fn rewrite_rejects_nesting() {
        let s = test_schema();
        assert!(matches!(
            rewrite_disjunction("((gender='M'))", &s),
            Err(Error::NonPrimitive { .. })
        ));
    }

    #[test]
    fn encodes_fig_style_query() {
        let s = test_schema();
        let q = parse_where("gender = 'M' AND age = 24 AND location = 'NYC'", &s).unwrap();
        let enc = encode_query(&q, &s).unwrap();
        // id('M')=0, bin(24)=0 (below first cut 25), id('NYC')=0
        assert_eq!(enc.ids, vec![0, 0, 0]);

        let q = parse_where("age = 45", &s).unwrap();
        let enc = encode_query(&q, &s).unwrap();
        // bin(45) = 2; gender/location take their default tokens
        assert_eq!(
            enc.ids,
            vec![s.attrs[0].default_token(), 2, s.attrs[2].default_token()]
        );
    }

    #[test]
    fn zero_predicate_encoding_is_all_defaults() {
        let s = test_schema();
        let enc = encode_query(&PrimitiveQuery::empty(), &s).unwrap();
        let expect: Vec<usize> = s.attrs.iter().map(|a| a.default_token()).collect();
        assert_eq!(enc.ids, expect);
    }

    #[test]
    fn encoding_invariant_to_predicate_order() {
        let s = test_schema();
        let a = parse_where("age = 30 AND gender = 'F'", &s).unwrap();
        let b = parse_where("gender = 'F' AND age = 30", &s).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            encode_query(&a, &s).unwrap(),
            encode_query(&b, &s).unwrap()
        );
        assert_eq!(a.canonical_key(&s).unwrap(), b.canonical_key(&s).unwrap());
    }

    #[test]
    fn parse_print_reparse_round_trip() {
        let s = test_schema();
        for text in [
            "gender = 'M' AND age = 24 AND location = 'NYC'",
            "location = 'LA'",
            "age = 33.5",
            "",
        ] {
            let q = parse_where(text, &s).unwrap();
            let q2 = parse_where(&q.text(), &s).unwrap();
            assert_eq!(q, q2);
        }
    }

    #[test]
    fn canonical_key_renders_bins() {
        let s = test_schema();
        let a = parse_where("age = 26", &s).unwrap();
        let b = parse_where("age = 39.9", &s).unwrap();
        // Same bin (25..40) => same key even though literals differ.
        assert_eq!(a.canonical_key(&s).unwrap(), b.canonical_key(&s).unwrap());
    }

    #[test]
    fn escaped_quote_in_literal() {
        let s = test_schema();
        let q = parse_where("location = 'O''Hare'", &s).unwrap();
        assert_eq!(q.predicates()[0].literal, Literal::Str("O'Hare".into()));
        let q2 = parse_where(&q.text(), &s).unwrap();
        assert_eq!(q, q2);
    }
}
