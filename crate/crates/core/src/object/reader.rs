//! S-expression reader.

use thiserror::Error;

use super::datum::Datum;
use super::symbol::Symbol;
use super::value::{Value, MOST_NEGATIVE_FIXNUM, MOST_POSITIVE_FIXNUM};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{line}:{column}: {message}")]
pub struct ReadError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

struct Reader<'a> {
    chars: Vec<char>,
    pos: usize,
    line: usize,
    column: usize,
    _src: &'a str,
}

const DELIMITERS: &str = "()'\";";

impl<'a> Reader<'a> {
    fn new(src: &'a str) -> Self {
        Reader { chars: src.chars().collect(), pos: 0, line: 1, column: 1, _src: src }
    }

    fn error(&self, message: impl Into<String>) -> ReadError {
        ReadError { line: self.line, column: self.column, message: message.into() }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += 1;
        if c == '\n' {
            self.line += 1;
            self.column = 1;
        } else {
            self.column += 1;
        }
        Some(c)
    }

    fn skip_trivia(&mut self) {
        while let Some(c) = self.peek() {
            if c.is_whitespace() {
                self.bump();
            } else if c == ';' {
                while let Some(c) = self.bump() {
                    if c == '\n' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    fn at_eof(&mut self) -> bool {
        self.skip_trivia();
        self.peek().is_none()
    }

    fn read(&mut self) -> Result<Datum, ReadError> {
        self.skip_trivia();
        let (line, column) = (self.line, self.column);
        match self.peek() {
            None => Err(self.error("unexpected end of input")),
            Some('(') => {
                self.bump();
                self.read_list(line, column)
            }
            Some(')') => Err(self.error("unexpected ')'")),
            Some('\'') => {
                self.bump();
                let quoted = self.read()?;
                Ok(Datum::list(vec![Datum::sym("quote"), quoted]))
            }
            Some('#') if self.chars.get(self.pos + 1) == Some(&'\'') => {
                self.bump();
                self.bump();
                let quoted = self.read()?;
                Ok(Datum::list(vec![Datum::sym("function"), quoted]))
            }
            Some('"') => {
                self.bump();
                self.read_string(line, column)
            }
            Some(_) => self.read_atom(),
        }
    }

    fn read_list(&mut self, line: usize, column: usize) -> Result<Datum, ReadError> {
        let mut items = Vec::new();
        loop {
            self.skip_trivia();
            match self.peek() {
                None => {
                    return Err(ReadError {
                        line,
                        column,
                        message: "unterminated list".into(),
                    })
                }
                Some(')') => {
                    self.bump();
                    return Ok(Datum::list(items));
                }
                Some('.') if self.is_lone_dot() => {
                    if items.is_empty() {
                        return Err(self.error("'.' at start of list"));
                    }
                    self.bump();
                    let tail = self.read()?;
                    self.skip_trivia();
                    match self.peek() {
                        Some(')') => {
                            self.bump();
                            return Ok(Datum::dotted(items, tail));
                        }
                        None => {
                            return Err(ReadError {
                                line,
                                column,
                                message: "unterminated list".into(),
                            })
                        }
                        Some(_) => return Err(self.error("expected ')' after dotted tail")),
                    }
                }
                Some(_) => items.push(self.read()?),
            }
        }
    }

    fn is_lone_dot(&self) -> bool {
        match self.chars.get(self.pos + 1) {
            None => true,
            Some(&c) => c.is_whitespace() || DELIMITERS.contains(c),
        }
    }

    fn read_string(&mut self, line: usize, column: usize) -> Result<Datum, ReadError> {
        let mut text = String::new();
        loop {
            match self.bump() {
                None => {
                    return Err(ReadError { line, column, message: "unterminated string".into() })
                }
                Some('"') => return Ok(Datum::Str(text)),
                Some('\\') => match self.bump() {
                    None => {
                        return Err(ReadError {
                            line,
                            column,
                            message: "unterminated string".into(),
                        })
                    }
                    Some('n') => text.push('\n'),
                    Some('t') => text.push('\t'),
                    Some(c) => text.push(c),
                },
                Some(c) => text.push(c),
            }
        }
    }

    fn read_atom(&mut self) -> Result<Datum, ReadError> {
        let (line, column) = (self.line, self.column);
        let mut token = String::new();
        let mut escaped = false;
        while let Some(c) = self.peek() {
            if c.is_whitespace() || DELIMITERS.contains(c) {
                break;
            }
            self.bump();
            if c == '\\' {
                match self.bump() {
                    Some(c) => {
                        token.push(c);
                        escaped = true;
                    }
                    None => return Err(self.error("end of input after escape")),
                }
            } else {
                token.push(c);
            }
        }
        if !escaped && token == "##" {
            return Ok(Datum::Symbol(Symbol::intern("")));
        }
        if !escaped {
            if let Some(number) = parse_number(&token) {
                return number.map_err(|message| ReadError { line, column, message });
            }
        }
        Ok(Datum::Symbol(Symbol::intern(&token)))
    }
}

/// Parses a numeric token; `None` means "not a number, read as symbol".
pub(crate) fn parse_number(token: &str) -> Option<Result<Datum, String>> {
    let body = token.strip_prefix(['+', '-']).unwrap_or(token);
    let negative = token.starts_with('-');
    if body.is_empty() {
        return None;
    }
    let int_body = body.strip_suffix('.').unwrap_or(body);
    if !int_body.is_empty() && int_body.bytes().all(|b| b.is_ascii_digit()) {
        let parsed = int_body.parse::<i128>().ok().map(|n| if negative { -n } else { n });
        return Some(match parsed {
            Some(n) if (MOST_NEGATIVE_FIXNUM as i128..=MOST_POSITIVE_FIXNUM as i128).contains(&n) => {
                Ok(Datum::Fixnum(n as i64))
            }
            _ => Err(format!("integer {token} out of fixnum range")),
        });
    }
    if let Some(mantissa) = body.strip_suffix("e+INF") {
        if is_decimal(mantissa) {
            return Some(Ok(Datum::Float(if negative { f64::NEG_INFINITY } else { f64::INFINITY })));
        }
    }
    if let Some(mantissa) = body.strip_suffix("e+NaN") {
        if is_decimal(mantissa) {
            let nan = if negative { -f64::NAN } else { f64::NAN };
            return Some(Ok(Datum::Float(nan)));
        }
    }
    let (mantissa, exponent) = match body.find(['e', 'E']) {
        Some(i) => (&body[..i], Some(&body[i + 1..])),
        None => (body, None),
    };
    let exponent_ok = exponent.is_none_or(|e| {
        let digits = e.strip_prefix(['+', '-']).unwrap_or(e);
        !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit())
    });
    let is_float = is_decimal(mantissa) && (mantissa.contains('.') || exponent.is_some());
    if is_float && exponent_ok {
        return token.parse::<f64>().ok().map(|x| Ok(Datum::Float(x)));
    }
    None
}

fn is_decimal(s: &str) -> bool {
    let mut parts = s.splitn(2, '.');
    let int = parts.next().unwrap_or("");
    let frac = parts.next().unwrap_or("");
    (!int.is_empty() || !frac.is_empty())
        && int.bytes().all(|b| b.is_ascii_digit())
        && frac.bytes().all(|b| b.is_ascii_digit())
}

/// Reads exactly one datum from `text`.
pub fn read_datum(text: &str) -> Result<Datum, ReadError> {
    let mut reader = Reader::new(text);
    let datum = reader.read()?;
    if !reader.at_eof() {
        return Err(reader.error("trailing input after datum"));
    }
    Ok(datum)
}

/// Reads every top-level datum in `text`.
pub fn read_all(text: &str) -> Result<Vec<Datum>, ReadError> {
    let mut reader = Reader::new(text);
    let mut out = Vec::new();
    while !reader.at_eof() {
        out.push(reader.read()?);
    }
    Ok(out)
}

/// Reads one datum and materializes it on the current thread's heap.
pub fn read(text: &str) -> Result<Value, ReadError> {
    read_datum(text).map(|d| d.to_value())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_if_form_with_quote() {
        let d = read_datum("(if *bar* (+ *bar* 2) 'foo)").unwrap();
        let items = d.as_list().unwrap();
        assert_eq!(items.len(), 4);
        assert_eq!(items[0], Datum::sym("if"));
        assert_eq!(items[3], Datum::list(vec![Datum::sym("quote"), Datum::sym("foo")]));
    }

    #[test]
    fn empty_list_is_nil() {
        assert_eq!(read_datum("()").unwrap(), Datum::NIL);
        assert!(read("()").unwrap().is_nil());
    }

    #[test]
    fn dotted_pair() {
        assert_eq!(
            read_datum("(1 . 2)").unwrap(),
            Datum::List(vec![Datum::Fixnum(1)], Some(Box::new(Datum::Fixnum(2))))
        );
    }

    #[test]
    fn numbers() {
        assert_eq!(read_datum("-12").unwrap(), Datum::Fixnum(-12));
        assert_eq!(read_datum("3.").unwrap(), Datum::Fixnum(3));
        assert_eq!(read_datum("1.5").unwrap(), Datum::Float(1.5));
        assert_eq!(read_datum("1e3").unwrap(), Datum::Float(1000.0));
        assert_eq!(read_datum("1.0e+INF").unwrap(), Datum::Float(f64::INFINITY));
        assert_eq!(read_datum("1+").unwrap(), Datum::sym("1+"));
        assert_eq!(read_datum("-").unwrap(), Datum::sym("-"));
        assert_eq!(read_datum("\\12").unwrap(), Datum::sym("12"));
    }

    #[test]
    fn fixnum_overflow_is_a_read_error() {
        let err = read_datum("1152921504606846976").unwrap_err();
        assert!(err.message.contains("out of fixnum range"));
    }

    #[test]
    fn interned_symbols_are_identical_values() {
        assert_eq!(read("foo").unwrap(), read("foo").unwrap());
    }

    #[test]
    fn errors_carry_position() {
        let err = read_datum("(a\n  (b").unwrap_err();
        assert_eq!(err.message, "unterminated list");
        assert_eq!((err.line, err.column), (2, 3));
        let err = read_datum("\"abc").unwrap_err();
        assert_eq!(err.message, "unterminated string");
        assert!(read_datum(")").is_err());
        assert!(read_datum("(. 1)").is_err());
    }

    #[test]
    fn comments_and_function_quote() {
        let all = read_all("; hi\n#'car ; trailing\n(a)").unwrap();
        assert_eq!(all.len(), 2);
        assert_eq!(all[0], Datum::list(vec![Datum::sym("function"), Datum::sym("car")]));
    }
}
