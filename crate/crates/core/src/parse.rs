//! Hand-rolled lexer and recursive-descent parser for the model-file
//! syntax:
//!
//! ```text
//! model  := (decl | constr)* solve ;
//! decl   := "var" ident "in" (range | set) ";"
//! range  := int ".." int
//! set    := "{" int ("," int)* "}"
//! constr := "constraint" call ";"
//! call   := ident "(" args ")"
//! solve  := "solve" ("satisfy" | "all") ";"
//! ```
//!
//! Supported calls: `eq(x,y,c)`, `neq(x,y,c)`, `leq(x,y,c)` (x ◊ y + c),
//! `linear([a,..],[v,..],"<="|"=",b)`, `alldifferent(v,..)` and
//! `table_neg([x,y],[a1,b1,..])`. Comments run from `#` to the end of the
//! line. The first error is reported with its line and column; there is no
//! recovery.

use crate::constraints::ConstraintSpec;
use crate::kernel::VarId;
use crate::model::{DomainSpec, Model, SolveGoal, VarDecl};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{line}:{col}: {message}")]
pub struct ParseError {
    pub line: u32,
    pub col: u32,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Int(i64),
    Str(String),
    LParen,
    RParen,
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Comma,
    Semi,
    DotDot,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier '{s}'"),
            Tok::Int(i) => format!("integer {i}"),
            Tok::Str(s) => format!("string \"{s}\""),
            Tok::LParen => "'('".into(),
            Tok::RParen => "')'".into(),
            Tok::LBrace => "'{'".into(),
            Tok::RBrace => "'}'".into(),
            Tok::LBracket => "'['".into(),
            Tok::RBracket => "']'".into(),
            Tok::Comma => "','".into(),
            Tok::Semi => "';'".into(),
            Tok::DotDot => "'..'".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

struct Lexer<'a> {
    src: &'a [u8],
    at: usize,
    line: u32,
    col: u32,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Lexer<'a> {
        Lexer {
            src: src.as_bytes(),
            at: 0,
            line: 1,
            col: 1,
        }
    }

    fn error(&self, line: u32, col: u32, message: impl Into<String>) -> ParseError {
        ParseError {
            line,
            col,
            message: message.into(),
        }
    }

    fn bump(&mut self) -> Option<u8> {
        let c = self.src.get(self.at).copied()?;
        self.at += 1;
        if c == b'\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.at).copied()
    }

    fn skip_trivia(&mut self) {
        loop {
            match self.peek() {
                Some(c) if c.is_ascii_whitespace() => {
                    self.bump();
                }
                Some(b'#') => {
                    while let Some(c) = self.peek() {
                        if c == b'\n' {
                            break;
                        }
                        self.bump();
                    }
                }
                _ => return,
            }
        }
    }

    /// Next token with the line/column where it starts.
    fn next(&mut self) -> Result<(Tok, u32, u32), ParseError> {
        self.skip_trivia();
        let (line, col) = (self.line, self.col);
        let Some(c) = self.peek() else {
            return Ok((Tok::Eof, line, col));
        };
        let tok = match c {
            b'(' => {
                self.bump();
                Tok::LParen
            }
            b')' => {
                self.bump();
                Tok::RParen
            }
            b'{' => {
                self.bump();
                Tok::LBrace
            }
            b'}' => {
                self.bump();
                Tok::RBrace
            }
            b'[' => {
                self.bump();
                Tok::LBracket
            }
            b']' => {
                self.bump();
                Tok::RBracket
            }
            b',' => {
                self.bump();
                Tok::Comma
            }
            b';' => {
                self.bump();
                Tok::Semi
            }
            b'.' => {
                self.bump();
                if self.peek() == Some(b'.') {
                    self.bump();
                    Tok::DotDot
                } else {
                    return Err(self.error(line, col, "expected '..'"));
                }
            }
            b'"' => {
                self.bump();
                let mut s = String::new();
                loop {
                    match self.bump() {
                        Some(b'"') => break,
                        Some(c) => s.push(c as char),
                        None => return Err(self.error(line, col, "unterminated string")),
                    }
                }
                Tok::Str(s)
            }
            b'-' | b'0'..=b'9' => {
                let mut s = String::new();
                s.push(self.bump().unwrap() as char);
                while let Some(d) = self.peek() {
                    if d.is_ascii_digit() {
                        s.push(self.bump().unwrap() as char);
                    } else {
                        break;
                    }
                }
                let v: i64 = s
                    .parse()
                    .map_err(|_| self.error(line, col, format!("bad integer '{s}'")))?;
                Tok::Int(v)
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let mut s = String::new();
                while let Some(d) = self.peek() {
                    if d.is_ascii_alphanumeric() || d == b'_' {
                        s.push(self.bump().unwrap() as char);
                    } else {
                        break;
                    }
                }
                Tok::Ident(s)
            }
            other => {
                return Err(self.error(line, col, format!("unexpected character '{}'", other as char)))
            }
        };
        Ok((tok, line, col))
    }
}

struct Parser<'a> {
    lexer: Lexer<'a>,
    tok: Tok,
    line: u32,
    col: u32,
    vars: Vec<VarDecl>,
    constraints: Vec<ConstraintSpec>,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Result<Parser<'a>, ParseError> {
        let mut lexer = Lexer::new(src);
        let (tok, line, col) = lexer.next()?;
        Ok(Parser {
            lexer,
            tok,
            line,
            col,
            vars: Vec::new(),
            constraints: Vec::new(),
        })
    }

    fn error(&self, message: impl Into<String>) -> ParseError {
        ParseError {
            line: self.line,
            col: self.col,
            message: message.into(),
        }
    }

    fn advance(&mut self) -> Result<(), ParseError> {
        let (tok, line, col) = self.lexer.next()?;
        self.tok = tok;
        self.line = line;
        self.col = col;
        Ok(())
    }

    fn expect(&mut self, want: Tok) -> Result<(), ParseError> {
        if self.tok == want {
            self.advance()
        } else {
            Err(self.error(format!(
                "expected {}, found {}",
                want.describe(),
                self.tok.describe()
            )))
        }
    }

    fn int(&mut self) -> Result<i64, ParseError> {
        match self.tok {
            Tok::Int(v) => {
                self.advance()?;
                Ok(v)
            }
            _ => Err(self.error(format!("expected integer, found {}", self.tok.describe()))),
        }
    }

    fn ident(&mut self) -> Result<String, ParseError> {
        match &self.tok {
            Tok::Ident(s) => {
                let s = s.clone();
                self.advance()?;
                Ok(s)
            }
            _ => Err(self.error(format!("expected identifier, found {}", self.tok.describe()))),
        }
    }

    fn var_ref(&mut self) -> Result<VarId, ParseError> {
        let (line, col) = (self.line, self.col);
        let name = self.ident()?;
        match self.vars.iter().position(|v| v.name == name) {
            Some(i) => Ok(VarId(i as u32)),
            None => Err(ParseError {
                line,
                col,
                message: format!("undeclared variable '{name}'"),
            }),
        }
    }

    fn int_list(&mut self) -> Result<Vec<i64>, ParseError> {
        self.expect(Tok::LBracket)?;
        let mut out = vec![self.int()?];
        while self.tok == Tok::Comma {
            self.advance()?;
            out.push(self.int()?);
        }
        self.expect(Tok::RBracket)?;
        Ok(out)
    }

    fn var_list(&mut self) -> Result<Vec<VarId>, ParseError> {
        self.expect(Tok::LBracket)?;
        let mut out = vec![self.var_ref()?];
        while self.tok == Tok::Comma {
            self.advance()?;
            out.push(self.var_ref()?);
        }
        self.expect(Tok::RBracket)?;
        Ok(out)
    }

    fn decl(&mut self) -> Result<(), ParseError> {
        // after "var"
        let (line, col) = (self.line, self.col);
        let name = self.ident()?;
        if self.vars.iter().any(|v| v.name == name) {
            return Err(ParseError {
                line,
                col,
                message: format!("variable '{name}' declared twice"),
            });
        }
        match &self.tok {
            Tok::Ident(kw) if kw == "in" => self.advance()?,
            _ => return Err(self.error(format!("expected 'in', found {}", self.tok.describe()))),
        }
        let domain = match self.tok {
            Tok::Int(_) => {
                let lo = self.int()?;
                self.expect(Tok::DotDot)?;
                let hi = self.int()?;
                DomainSpec::Range(lo, hi)
            }
            Tok::LBrace => {
                self.advance()?;
                let mut vs = vec![self.int()?];
                while self.tok == Tok::Comma {
                    self.advance()?;
                    vs.push(self.int()?);
                }
                self.expect(Tok::RBrace)?;
                DomainSpec::Set(vs)
            }
            _ => {
                return Err(self.error(format!(
                    "expected a range or a value set, found {}",
                    self.tok.describe()
                )))
            }
        };
        self.expect(Tok::Semi)?;
        self.vars.push(VarDecl { name, domain });
        Ok(())
    }

    fn binary_offset(&mut self) -> Result<(VarId, VarId, i64), ParseError> {
        self.expect(Tok::LParen)?;
        let x = self.var_ref()?;
        self.expect(Tok::Comma)?;
        let y = self.var_ref()?;
        self.expect(Tok::Comma)?;
        let c = self.int()?;
        self.expect(Tok::RParen)?;
        Ok((x, y, c))
    }

    fn constr(&mut self) -> Result<(), ParseError> {
        // after "constraint"
        let (line, col) = (self.line, self.col);
        let name = self.ident()?;
        let spec = match name.as_str() {
            "eq" => {
                let (x, y, c) = self.binary_offset()?;
                ConstraintSpec::EqOffset { x, y, c }
            }
            "neq" => {
                let (x, y, c) = self.binary_offset()?;
                ConstraintSpec::NeqOffset { x, y, c }
            }
            "leq" => {
                let (x, y, c) = self.binary_offset()?;
                ConstraintSpec::LeqOffset { x, y, c }
            }
            "linear" => {
                self.expect(Tok::LParen)?;
                let coeffs = self.int_list()?;
                self.expect(Tok::Comma)?;
                let vars = self.var_list()?;
                self.expect(Tok::Comma)?;
                let op = match &self.tok {
                    Tok::Str(s) => {
                        let s = s.clone();
                        self.advance()?;
                        s
                    }
                    _ => {
                        return Err(self.error(format!(
                            "expected \"<=\" or \"=\", found {}",
                            self.tok.describe()
                        )))
                    }
                };
                self.expect(Tok::Comma)?;
                let bound = self.int()?;
                self.expect(Tok::RParen)?;
                match op.as_str() {
                    "<=" => ConstraintSpec::LinearLeq {
                        coeffs,
                        vars,
                        bound,
                    },
                    "=" => ConstraintSpec::LinearEq {
                        coeffs,
                        vars,
                        bound,
                    },
                    other => {
                        return Err(ParseError {
                            line,
                            col,
                            message: format!("unknown linear relation \"{other}\""),
                        })
                    }
                }
            }
            "alldifferent" => {
                self.expect(Tok::LParen)?;
                let mut vars = vec![self.var_ref()?];
                while self.tok == Tok::Comma {
                    self.advance()?;
                    vars.push(self.var_ref()?);
                }
                self.expect(Tok::RParen)?;
                ConstraintSpec::AllDifferent { vars }
            }
            "table_neg" => {
                self.expect(Tok::LParen)?;
                let vars = self.var_list()?;
                if vars.len() != 2 {
                    return Err(ParseError {
                        line,
                        col,
                        message: "table_neg takes exactly two variables".into(),
                    });
                }
                self.expect(Tok::Comma)?;
                let flat = self.int_list()?;
                self.expect(Tok::RParen)?;
                if flat.len() % 2 != 0 {
                    return Err(ParseError {
                        line,
                        col,
                        message: "table_neg needs an even number of tuple values".into(),
                    });
                }
                let forbidden = flat.chunks(2).map(|c| (c[0], c[1])).collect();
                ConstraintSpec::TableNeg {
                    x: vars[0],
                    y: vars[1],
                    forbidden,
                }
            }
            other => {
                return Err(ParseError {
                    line,
                    col,
                    message: format!("unknown constraint '{other}'"),
                })
            }
        };
        self.expect(Tok::Semi)?;
        self.constraints.push(spec);
        Ok(())
    }

    fn model(mut self) -> Result<Model, ParseError> {
        loop {
            match &self.tok {
                Tok::Ident(kw) if kw == "var" => {
                    self.advance()?;
                    self.decl()?;
                }
                Tok::Ident(kw) if kw == "constraint" => {
                    self.advance()?;
                    self.constr()?;
                }
                Tok::Ident(kw) if kw == "solve" => {
                    self.advance()?;
                    let goal = match &self.tok {
                        Tok::Ident(g) if g == "satisfy" => SolveGoal::Satisfy,
                        Tok::Ident(g) if g == "all" => SolveGoal::All,
                        _ => {
                            return Err(self.error(format!(
                                "expected 'satisfy' or 'all', found {}",
                                self.tok.describe()
                            )))
                        }
                    };
                    self.advance()?;
                    self.expect(Tok::Semi)?;
                    if self.tok != Tok::Eof {
                        return Err(self.error(format!(
                            "expected end of input after 'solve', found {}",
                            self.tok.describe()
                        )));
                    }
                    return Ok(Model {
                        vars: self.vars,
                        constraints: self.constraints,
                        goal,
                    });
                }
                _ => {
                    return Err(self.error(format!(
                        "expected 'var', 'constraint' or 'solve', found {}",
                        self.tok.describe()
                    )))
                }
            }
        }
    }
}

/// Parses a model file. Every input either yields a model or a positioned
/// error.
pub fn parse_model(text: &str) -> Result<Model, ParseError> {
    Parser::new(text)?.model()
}
