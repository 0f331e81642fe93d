//! Minimal reader for the undirected DOT subset: `graph ID { stmt* }` with
//! node statements, `--` edge statements and bracketed attribute lists.

#![allow(dead_code)]

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    pub name: String,
    pub nodes: Vec<String>,
    /// `(a, b, attributes)`
    pub edges: Vec<(String, String, Vec<(String, String)>)>,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Id(String),
    Quoted(String),
    EdgeOp,
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Eq,
    Semi,
    Comma,
}

const KEYWORDS: [&str; 6] = ["graph", "digraph", "subgraph", "node", "edge", "strict"];

fn lex(src: &str) -> Result<Vec<Tok>, String> {
    let mut out = Vec::new();
    let cs: Vec<char> = src.chars().collect();
    let mut i = 0;
    while i < cs.len() {
        let c = cs[i];
        match c {
            c if c.is_whitespace() => i += 1,
            '{' => (out.push(Tok::LBrace), i += 1).1,
            '}' => (out.push(Tok::RBrace), i += 1).1,
            '[' => (out.push(Tok::LBracket), i += 1).1,
            ']' => (out.push(Tok::RBracket), i += 1).1,
            '=' => (out.push(Tok::Eq), i += 1).1,
            ';' => (out.push(Tok::Semi), i += 1).1,
            ',' => (out.push(Tok::Comma), i += 1).1,
            '-' if cs.get(i + 1) == Some(&'-') => (out.push(Tok::EdgeOp), i += 2).1,
            '-' if cs.get(i + 1) == Some(&'>') => return Err("directed edge in undirected graph".into()),
            '"' => {
                let mut s = String::new();
                i += 1;
                loop {
                    match cs.get(i) {
                        None => return Err("unterminated string".into()),
                        Some('"') => break,
                        Some('\\') => {
                            match cs.get(i + 1) {
                                Some('"') => s.push('"'),
                                Some('\\') => s.push('\\'),
                                Some('n') => s.push('\n'),
                                Some(other) => {
                                    s.push('\\');
                                    s.push(*other);
                                }
                                None => return Err("dangling escape".into()),
                            }
                            i += 2;
                        }
                        Some(&ch) => {
                            s.push(ch);
                            i += 1;
                        }
                    }
                }
                i += 1;
                out.push(Tok::Quoted(s));
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < cs.len() && (cs[i].is_ascii_alphanumeric() || cs[i] == '_') {
                    i += 1;
                }
                out.push(Tok::Id(cs[start..i].iter().collect()));
            }
            c if c.is_ascii_digit() || c == '.' || c == '-' => {
                let start = i;
                i += 1;
                while i < cs.len() && (cs[i].is_ascii_digit() || cs[i] == '.') {
                    i += 1;
                }
                let s: String = cs[start..i].iter().collect();
                s.parse::<f64>().map_err(|_| format!("bad numeral '{s}'"))?;
                out.push(Tok::Id(s));
            }
            other => return Err(format!("unexpected character {other:?}")),
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<Tok>,
    at: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.at)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.at).cloned();
        self.at += 1;
        t
    }

    fn expect(&mut self, t: Tok) -> Result<(), String> {
        match self.next() {
            Some(ref got) if *got == t => Ok(()),
            got => Err(format!("expected {t:?}, got {got:?}")),
        }
    }

    fn id(&mut self) -> Result<String, String> {
        match self.next() {
            Some(Tok::Id(s)) if KEYWORDS.iter().any(|k| k.eq_ignore_ascii_case(&s)) => {
                Err(format!("keyword '{s}' used as an identifier"))
            }
            Some(Tok::Id(s)) | Some(Tok::Quoted(s)) => Ok(s),
            got => Err(format!("expected identifier, got {got:?}")),
        }
    }

    fn attrs(&mut self) -> Result<Vec<(String, String)>, String> {
        let mut out = Vec::new();
        if self.peek() != Some(&Tok::LBracket) {
            return Ok(out);
        }
        self.next();
        while self.peek() != Some(&Tok::RBracket) {
            let k = self.id()?;
            self.expect(Tok::Eq)?;
            let v = self.id()?;
            out.push((k, v));
            if matches!(self.peek(), Some(Tok::Comma) | Some(Tok::Semi)) {
                self.next();
            }
        }
        self.expect(Tok::RBracket)?;
        Ok(out)
    }
}

pub fn parse(src: &str) -> Result<Graph, String> {
    let mut p = Parser { toks: lex(src)?, at: 0 };
    match p.next() {
        Some(Tok::Id(k)) if k.eq_ignore_ascii_case("graph") => {}
        got => return Err(format!("expected 'graph', got {got:?}")),
    }
    let name = if p.peek() == Some(&Tok::LBrace) { String::new() } else { p.id()? };
    p.expect(Tok::LBrace)?;
    let mut g = Graph {
        name,
        nodes: Vec::new(),
        edges: Vec::new(),
    };
    loop {
        match p.peek() {
            Some(Tok::RBrace) => {
                p.next();
                break;
            }
            None => return Err("missing '}'".into()),
            _ => {}
        }
        let a = p.id()?;
        if p.peek() == Some(&Tok::EdgeOp) {
            p.next();
            let b = p.id()?;
            let attrs = p.attrs()?;
            g.edges.push((a, b, attrs));
        } else {
            p.attrs()?;
            g.nodes.push(a);
        }
        if p.peek() == Some(&Tok::Semi) {
            p.next();
        }
    }
    if p.at != p.toks.len() {
        return Err("trailing tokens after graph body".into());
    }
    Ok(g)
}
