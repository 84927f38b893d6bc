//! Recursive-descent parser for the expression grammar
//!
//! ```text
//! expr   := term (("+"|"-") term)*
//! term   := factor (("*"|"/") factor)*
//! factor := base ("^" ["-"] INTEGER)?
//! base   := NUMBER | IDENT | FUNC "(" expr ")" | "(" expr ")" | "-" base
//! ```
//!
//! Unary minus binds tighter than `^`, so `-x1^2` is `(-x1)^2`.

use std::collections::HashMap;

use super::{ExprError, Func, Node, SmoothExpr};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Number(f64, bool),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    column: usize,
}

fn lex(text: &str) -> Result<Vec<Token>, ExprError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut line, mut column) = (1, 1);
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let (tl, tc) = (line, column);
        if c == '\n' {
            line += 1;
            column = 1;
            i += 1;
            continue;
        }
        if c.is_whitespace() {
            column += 1;
            i += 1;
            continue;
        }
        let single = match c {
            '+' => Some(Tok::Plus),
            '-' => Some(Tok::Minus),
            '*' => Some(Tok::Star),
            '/' => Some(Tok::Slash),
            '^' => Some(Tok::Caret),
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            _ => None,
        };
        if let Some(tok) = single {
            out.push(Token {
                tok,
                line: tl,
                column: tc,
            });
            i += 1;
            column += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_digit() || c == '.' {
            let mut integral = true;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            if i < chars.len() && chars[i] == '.' {
                integral = false;
                i += 1;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    integral = false;
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let s: String = chars[start..i].iter().collect();
            let v = s.parse::<f64>().map_err(|_| ExprError::Syntax {
                line: tl,
                column: tc,
                message: format!("malformed number `{s}`"),
            })?;
            out.push(Token {
                tok: Tok::Number(v, integral),
                line: tl,
                column: tc,
            });
            column += i - start;
            continue;
        }
        if c.is_alphabetic() || c == '_' {
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            let s: String = chars[start..i].iter().collect();
            out.push(Token {
                tok: Tok::Ident(s),
                line: tl,
                column: tc,
            });
            column += i - start;
            continue;
        }
        return Err(ExprError::Syntax {
            line: tl,
            column: tc,
            message: format!("unexpected character `{c}`"),
        });
    }
    out.push(Token {
        tok: Tok::Eof,
        line,
        column,
    });
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    n_vars: usize,
    aliases: &'a HashMap<String, usize>,
}

impl Parser<'_> {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn bump(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if t.tok != Tok::Eof {
            self.pos += 1;
        }
        t
    }

    fn error(&self, tok: &Token, message: impl Into<String>) -> ExprError {
        ExprError::Syntax {
            line: tok.line,
            column: tok.column,
            message: message.into(),
        }
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), ExprError> {
        let t = self.bump();
        if t.tok == want {
            Ok(())
        } else {
            Err(self.error(&t, format!("expected {what}")))
        }
    }

    fn expr(&mut self) -> Result<SmoothExpr, ExprError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek().tok {
                Tok::Plus => {
                    self.bump();
                    let rhs = self.term()?;
                    lhs = SmoothExpr::from_node(Node::Sum(lhs, rhs));
                }
                Tok::Minus => {
                    self.bump();
                    let rhs = self.term()?;
                    let neg = SmoothExpr::from_node(Node::Unary(Func::Neg, rhs));
                    lhs = SmoothExpr::from_node(Node::Sum(lhs, neg));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<SmoothExpr, ExprError> {
        let mut lhs = self.factor()?;
        loop {
            match self.peek().tok {
                Tok::Star => {
                    self.bump();
                    let rhs = self.factor()?;
                    lhs = SmoothExpr::from_node(Node::Product(lhs, rhs));
                }
                Tok::Slash => {
                    self.bump();
                    let rhs = self.factor()?;
                    lhs = SmoothExpr::from_node(Node::Quotient(lhs, rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn factor(&mut self) -> Result<SmoothExpr, ExprError> {
        let base = self.base()?;
        if self.peek().tok != Tok::Caret {
            return Ok(base);
        }
        self.bump();
        let negative = if self.peek().tok == Tok::Minus {
            self.bump();
            true
        } else {
            false
        };
        let t = self.bump();
        match t.tok {
            Tok::Number(v, true) if v <= i32::MAX as f64 => {
                let k = if negative { -(v as i32) } else { v as i32 };
                Ok(SmoothExpr::from_node(Node::Pow(base, k)))
            }
            _ => Err(self.error(&t, "expected an integer exponent")),
        }
    }

    fn base(&mut self) -> Result<SmoothExpr, ExprError> {
        let t = self.bump();
        match t.tok {
            Tok::Number(v, _) => Ok(SmoothExpr::constant(v)),
            Tok::Minus => {
                // A minus directly before a literal makes a negative constant.
                if let Tok::Number(v, _) = self.peek().tok {
                    self.bump();
                    return Ok(SmoothExpr::constant(-v));
                }
                let inner = self.base()?;
                Ok(SmoothExpr::from_node(Node::Unary(Func::Neg, inner)))
            }
            Tok::LParen => {
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Ident(ref name) => {
                if let Some(func) = Func::from_name(name) {
                    self.expect(Tok::LParen, "`(` after function name")?;
                    let arg = self.expr()?;
                    self.expect(Tok::RParen, "`)`")?;
                    return Ok(SmoothExpr::from_node(Node::Unary(func, arg)));
                }
                let index = if let Some(&i) = self.aliases.get(name) {
                    i + 1
                } else if let Some(i) = name
                    .strip_prefix('x')
                    .filter(|d| !d.is_empty() && d.chars().all(|c| c.is_ascii_digit()))
                    .and_then(|d| d.parse::<usize>().ok())
                {
                    i
                } else {
                    return Err(ExprError::UnknownIdentifier {
                        name: name.clone(),
                        line: t.line,
                        column: t.column,
                    });
                };
                if index == 0 || index > self.n_vars {
                    return Err(ExprError::VariableOutOfRange {
                        index,
                        n_vars: self.n_vars,
                        line: t.line,
                        column: t.column,
                    });
                }
                Ok(SmoothExpr::var(index - 1))
            }
            Tok::Eof => Err(self.error(&t, "unexpected end of input")),
            _ => Err(self.error(&t, "unexpected token")),
        }
    }
}

/// Parses `text` over the variables `x1..x{n_vars}`.
pub fn parse(text: &str, n_vars: usize) -> Result<SmoothExpr, ExprError> {
    parse_with_aliases(text, n_vars, &HashMap::new())
}

/// Like [`parse`], with additional names mapped to zero-based variable indices.
pub fn parse_with_aliases(
    text: &str,
    n_vars: usize,
    aliases: &HashMap<String, usize>,
) -> Result<SmoothExpr, ExprError> {
    let tokens = lex(text)?;
    let mut p = Parser {
        tokens,
        pos: 0,
        n_vars,
        aliases,
    };
    let e = p.expr()?;
    let t = p.bump();
    if t.tok != Tok::Eof {
        return Err(p.error(&t, "unexpected trailing input"));
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn var(i: usize) -> SmoothExpr {
        SmoothExpr::var(i)
    }

    #[test]
    fn sum_of_squares_tree() {
        let e = parse("x1^2 + x2^2", 2).unwrap();
        let expect = SmoothExpr::from_node(Node::Sum(
            SmoothExpr::from_node(Node::Pow(var(0), 2)),
            SmoothExpr::from_node(Node::Pow(var(1), 2)),
        ));
        assert_eq!(e, expect);
    }

    #[test]
    fn product_tree() {
        let e = parse("sin(x1)*x2", 2).unwrap();
        let expect = SmoothExpr::from_node(Node::Product(
            SmoothExpr::from_node(Node::Unary(Func::Sin, var(0))),
            var(1),
        ));
        assert_eq!(e, expect);
    }

    #[test]
    fn incomplete_expression_reports_column() {
        match parse("x3 +", 3) {
            Err(ExprError::Syntax { line, column, .. }) => {
                assert_eq!((line, column), (1, 5));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn errors_for_identifiers() {
        assert!(matches!(
            parse("y + 1", 2),
            Err(ExprError::UnknownIdentifier { column: 1, .. })
        ));
        assert!(matches!(
            parse("x1 + x3", 2),
            Err(ExprError::VariableOutOfRange { index: 3, column: 6, .. })
        ));
        assert!(matches!(parse("x0", 2), Err(ExprError::VariableOutOfRange { .. })));
    }

    #[test]
    fn multiline_positions() {
        match parse("x1 +\n  * x2", 2) {
            Err(ExprError::Syntax { line, column, .. }) => assert_eq!((line, column), (2, 3)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn aliases_resolve() {
        let mut aliases = HashMap::new();
        aliases.insert("q".to_string(), 0);
        aliases.insert("p".to_string(), 1);
        let e = parse_with_aliases("q*p - 1", 2, &aliases).unwrap();
        assert_eq!(e.eval(&[2.0, 3.0]).unwrap(), 5.0);
    }

    #[test]
    fn unary_minus_binds_tighter_than_power() {
        let e = parse("-x1^2", 1).unwrap();
        assert_eq!(e.eval(&[3.0]).unwrap(), 9.0);
        let e = parse("0 - x1^2", 1).unwrap();
        assert_eq!(e.eval(&[3.0]).unwrap(), -9.0);
    }

    #[test]
    fn non_integer_exponent_rejected() {
        assert!(parse("x1^2.5", 1).is_err());
        assert!(parse("x1^1e3", 1).is_err());
    }

    #[test]
    fn printer_round_trips() {
        for text in [
            "x1^2 + x2^2",
            "-x1^2",
            "-(x1 - 3) / (2*x2) + sqrt(x1)^-3",
            "exp(-1e-10 * x1) * tanh(x2) - log(0.5)",
            "flat(x1) + flatd2(1 - x1)",
        ] {
            let e = parse(text, 2).unwrap();
            let printed = e.to_string();
            assert_eq!(parse(&printed, 2).unwrap(), e, "{text} -> {printed}");
        }
    }
}
