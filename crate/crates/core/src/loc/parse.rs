use super::{AnalysisPeriod, AnnotationRef, BinaryOp, Constraint, DistOp, Expr, LocError, LocFormula, Relation};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(f64),
    LParen,
    RParen,
    LBracket,
    RBracket,
    LBrace,
    RBrace,
    Comma,
    Plus,
    Minus,
    Star,
    Slash,
    Rel(Relation),
    Dist(DistOp),
    End,
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(s) => format!("`{s}`"),
        Tok::Number(n) => format!("number {n}"),
        Tok::End => "end of input".into(),
        other => format!("{other:?}"),
    }
}

fn lex(src: &str) -> Result<Vec<(usize, Tok)>, LocError> {
    let mut out = Vec::new();
    let mut it = src.char_indices().peekable();
    while let Some(&(pos, c)) = it.peek() {
        if c.is_whitespace() {
            it.next();
            continue;
        }
        if c.is_ascii_digit() || c == '.' {
            let start = pos;
            let mut end = pos;
            let mut prev = ' ';
            while let Some(&(p, d)) = it.peek() {
                let exp_sign = (d == '+' || d == '-') && (prev == 'e' || prev == 'E');
                if d.is_ascii_digit() || d == '.' || d == 'e' || d == 'E' || exp_sign {
                    end = p + d.len_utf8();
                    prev = d;
                    it.next();
                } else {
                    break;
                }
            }
            let text = &src[start..end];
            let n = text.parse::<f64>().map_err(|_| LocError::Syntax {
                pos: start,
                msg: format!("malformed number `{text}`"),
            })?;
            out.push((start, Tok::Number(n)));
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = pos;
            let mut end = pos;
            while let Some(&(p, d)) = it.peek() {
                if d.is_ascii_alphanumeric() || d == '_' {
                    end = p + 1;
                    it.next();
                } else {
                    break;
                }
            }
            out.push((start, Tok::Ident(src[start..end].to_string())));
            continue;
        }
        it.next();
        let next = it.peek().map(|&(_, d)| d);
        let mut take_next = || {
            it.next();
        };
        let tok = match (c, next) {
            ('<', Some('=')) => {
                take_next();
                Tok::Rel(Relation::Le)
            }
            ('<', Some('|')) => {
                take_next();
                Tok::Dist(DistOp::AtMost)
            }
            ('<', _) => Tok::Rel(Relation::Lt),
            ('>', Some('=')) => {
                take_next();
                Tok::Rel(Relation::Ge)
            }
            ('>', Some('<')) => {
                take_next();
                Tok::Dist(DistOp::Partition)
            }
            ('>', _) => Tok::Rel(Relation::Gt),
            ('=', Some('=')) => {
                take_next();
                Tok::Rel(Relation::Eq)
            }
            ('!', Some('=')) => {
                take_next();
                Tok::Rel(Relation::Ne)
            }
            ('|', Some('>')) => {
                take_next();
                Tok::Dist(DistOp::AtLeast)
            }
            ('≤', _) => Tok::Rel(Relation::Le),
            ('≥', _) => Tok::Rel(Relation::Ge),
            ('≠', _) => Tok::Rel(Relation::Ne),
            ('⋈', _) => Tok::Dist(DistOp::Partition),
            ('◁', _) => Tok::Dist(DistOp::AtMost),
            ('▷', _) => Tok::Dist(DistOp::AtLeast),
            ('(', _) => Tok::LParen,
            (')', _) => Tok::RParen,
            ('[', _) => Tok::LBracket,
            (']', _) => Tok::RBracket,
            ('{', _) => Tok::LBrace,
            ('}', _) => Tok::RBrace,
            (',', _) => Tok::Comma,
            ('+', _) => Tok::Plus,
            ('-' | '−', _) => Tok::Minus,
            ('*' | '×', _) => Tok::Star,
            ('/' | '÷', _) => Tok::Slash,
            _ => {
                return Err(LocError::Syntax {
                    pos,
                    msg: format!("unexpected character `{c}`"),
                })
            }
        };
        out.push((pos, tok));
    }
    out.push((src.len(), Tok::End));
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    at: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].1
    }

    fn pos(&self) -> usize {
        self.toks[self.at].0
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.at].1.clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn fail<T>(&self, msg: impl Into<String>) -> Result<T, LocError> {
        Err(LocError::Syntax {
            pos: self.pos(),
            msg: msg.into(),
        })
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), LocError> {
        if *self.peek() == want {
            self.bump();
            Ok(())
        } else {
            self.fail(format!("expected {what}, found {}", describe(self.peek())))
        }
    }

    fn formula(&mut self) -> Result<LocFormula, LocError> {
        let lhs = self.expr()?;
        let constraint = match self.bump() {
            Tok::Rel(relation) => Constraint::Assertion {
                relation,
                bound: self.signed_number()?,
            },
            Tok::Dist(op) => {
                self.expect(Tok::LBrace, "`{`")?;
                let min = self.signed_number()?;
                self.expect(Tok::Comma, "`,`")?;
                let max = self.signed_number()?;
                self.expect(Tok::Comma, "`,`")?;
                let step = self.signed_number()?;
                self.expect(Tok::RBrace, "`}`")?;
                Constraint::Distribution {
                    op,
                    period: AnalysisPeriod::new(min, max, step)?,
                }
            }
            other => {
                self.at = self.at.saturating_sub(1);
                return self.fail(format!(
                    "expected a relation or distribution operator, found {}",
                    describe(&other)
                ));
            }
        };
        if *self.peek() != Tok::End {
            return self.fail(format!("trailing input: {}", describe(self.peek())));
        }
        let f = LocFormula { lhs, constraint };
        if f.terms().is_empty() {
            return Err(LocError::NoAnnotation);
        }
        Ok(f)
    }

    fn signed_number(&mut self) -> Result<f64, LocError> {
        let neg = if *self.peek() == Tok::Minus {
            self.bump();
            true
        } else {
            false
        };
        match self.bump() {
            Tok::Number(n) => Ok(if neg { -n } else { n }),
            other => {
                self.at = self.at.saturating_sub(1);
                self.fail(format!("expected a number, found {}", describe(&other)))
            }
        }
    }

    fn expr(&mut self) -> Result<Expr, LocError> {
        let mut lhs = self.product()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinaryOp::Add,
                Tok::Minus => BinaryOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.product()?;
            lhs = fold(op, lhs, rhs);
        }
    }

    fn product(&mut self) -> Result<Expr, LocError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinaryOp::Mul,
                Tok::Slash => BinaryOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = fold(op, lhs, rhs);
        }
    }

    fn unary(&mut self) -> Result<Expr, LocError> {
        if *self.peek() == Tok::Minus {
            self.bump();
            return Ok(match self.unary()? {
                Expr::Number(n) => Expr::Number(-n),
                e => Expr::Neg(Box::new(e)),
            });
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, LocError> {
        match self.bump() {
            Tok::Number(n) => Ok(Expr::Number(n)),
            Tok::LParen => {
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Ident(annotation) => {
                self.expect(Tok::LParen, "`(` after annotation name")?;
                let event = match self.bump() {
                    Tok::Ident(e) => e,
                    other => {
                        self.at -= 1;
                        return self.fail(format!("expected event name, found {}", describe(&other)));
                    }
                };
                self.expect(Tok::LBracket, "`[`")?;
                let offset = self.index()?;
                self.expect(Tok::RBracket, "`]`")?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(Expr::Term(AnnotationRef {
                    annotation,
                    event,
                    offset,
                }))
            }
            other => {
                self.at = self.at.saturating_sub(1);
                self.fail(format!("expected an expression, found {}", describe(&other)))
            }
        }
    }

    /// `i` or `i+k`
    fn index(&mut self) -> Result<usize, LocError> {
        match self.bump() {
            Tok::Ident(v) if v == "i" => {}
            Tok::Ident(v) => return Err(LocError::MultipleIndexVariables(v)),
            other => {
                self.at -= 1;
                return self.fail(format!("expected index variable `i`, found {}", describe(&other)));
            }
        }
        match self.peek() {
            Tok::Plus => {
                self.bump();
                let pos = self.pos();
                match self.bump() {
                    Tok::Number(n) if n >= 0.0 && n.fract() == 0.0 && n <= u32::MAX as f64 => Ok(n as usize),
                    Tok::Minus => Err(LocError::NegativeOffset(pos)),
                    other => {
                        self.at -= 1;
                        self.fail(format!("expected a non-negative integer offset, found {}", describe(&other)))
                    }
                }
            }
            Tok::Minus => Err(LocError::NegativeOffset(self.pos())),
            _ => Ok(0),
        }
    }
}

fn fold(op: BinaryOp, lhs: Expr, rhs: Expr) -> Expr {
    if let (Expr::Number(a), Expr::Number(b)) = (&lhs, &rhs) {
        let v = match op {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
            BinaryOp::Div => a / b,
        };
        if v.is_finite() {
            return Expr::Number(v);
        }
    }
    Expr::Binary(op, Box::new(lhs), Box::new(rhs))
}

pub fn parse_formula(text: &str) -> Result<LocFormula, LocError> {
    let toks = lex(text)?;
    Parser { toks, at: 0 }.formula()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn latency_assertion() {
        let f = parse_formula("cycle(deq[i]) - cycle(enq[i]) <= 50").unwrap();
        assert_eq!(
            f.constraint,
            Constraint::Assertion {
                relation: Relation::Le,
                bound: 50.0
            }
        );
        let offsets: Vec<usize> = f.terms().iter().map(|t| t.offset).collect();
        assert_eq!(offsets, [0, 0]);
    }

    #[test]
    fn latency_distribution() {
        let f = parse_formula("time(forward[i+100]) - time(forward[i]) >< {40, 80, 5}").unwrap();
        match f.constraint {
            Constraint::Distribution { op, period } => {
                assert_eq!(op, DistOp::Partition);
                assert_eq!((period.min, period.max, period.step), (40.0, 80.0, 5.0));
            }
            _ => panic!("expected distribution"),
        }
        let offsets: Vec<usize> = f.terms().iter().map(|t| t.offset).collect();
        assert_eq!(offsets, [100, 0]);
    }

    #[test]
    fn missing_operator() {
        let err = parse_formula("time(forward[i+1])").unwrap_err();
        assert!(matches!(err, LocError::Syntax { .. }), "{err:?}");
    }

    #[test]
    fn rejects_bad_indices() {
        assert!(matches!(
            parse_formula("time(a[j]) >= 0"),
            Err(LocError::MultipleIndexVariables(_))
        ));
        assert!(matches!(
            parse_formula("time(a[i-1]) >= 0"),
            Err(LocError::NegativeOffset(_))
        ));
        assert!(matches!(
            parse_formula("time(a[i+-1]) >= 0"),
            Err(LocError::NegativeOffset(_))
        ));
        assert!(parse_formula("time(a[i+1.5]) >= 0").is_err());
    }

    #[test]
    fn rejects_bad_periods() {
        assert!(matches!(
            parse_formula("time(a[i]) >< {1, 5, 0}"),
            Err(LocError::InvalidPeriod(_))
        ));
        assert!(matches!(
            parse_formula("time(a[i]) <| {5, 5, 1}"),
            Err(LocError::InvalidPeriod(_))
        ));
    }

    #[test]
    fn needs_an_annotation() {
        assert_eq!(parse_formula("1 + 2 <= 3"), Err(LocError::NoAnnotation));
    }

    #[test]
    fn precedence_and_folding() {
        let f = parse_formula("time(a[i]) + 2 * 3 - 1 > 0").unwrap();
        let expected = Expr::Binary(
            BinaryOp::Sub,
            Box::new(Expr::Binary(
                BinaryOp::Add,
                Box::new(Expr::Term(AnnotationRef {
                    annotation: "time".into(),
                    event: "a".into(),
                    offset: 0,
                })),
                Box::new(Expr::Number(6.0)),
            )),
            Box::new(Expr::Number(1.0)),
        );
        assert_eq!(f.lhs, expected);
    }

    #[test]
    fn unicode_operators() {
        let a = parse_formula("cycle(deq[i]) − cycle(enq[i]) ≤ 50").unwrap();
        let b = parse_formula("cycle(deq[i]) - cycle(enq[i]) <= 50").unwrap();
        assert_eq!(a, b);
        let c = parse_formula("energy(f[i]) ▷ {0.5, 2.25, 0.01}").unwrap();
        assert!(matches!(
            c.constraint,
            Constraint::Distribution {
                op: DistOp::AtLeast,
                ..
            }
        ));
    }

    #[test]
    fn scientific_and_negative_constants() {
        let f = parse_formula("total_bit(f[i]) / 1e6 >= -2.5").unwrap();
        assert_eq!(
            f.constraint,
            Constraint::Assertion {
                relation: Relation::Ge,
                bound: -2.5
            }
        );
    }

    #[test]
    fn print_reparse() {
        for src in [
            "cycle(deq[i]) - cycle(enq[i]) <= 50",
            "(energy(forward[i+100]) - energy(forward[i])) / (time(forward[i+100]) - time(forward[i])) |> {0.5, 2.25, 0.01}",
            "-time(a[i+3]) * -2 + 0.1 != 7",
            "time(a[i]) / (1 - 1) <| {-1, 1, 0.25}",
        ] {
            let f = parse_formula(src).unwrap();
            let g = parse_formula(&f.to_string()).unwrap();
            assert_eq!(f, g, "{src} -> {f}");
        }
    }
}
