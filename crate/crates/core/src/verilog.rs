//! Lightweight structural passes over Verilog source text.
//!
//! This is not a Verilog parser. The harness only needs four things, all of
//! which survive on token-level structure: find module declarations, read an
//! ANSI/non-ANSI port list, rename a module declaration in place, and compare
//! two sources modulo comments and whitespace. Everything first masks
//! comments (and optionally string literals) so `module` inside a comment or
//! a `$display` string never confuses a scan. All functions are total: any
//! byte sequence yields a result, never a panic.

use std::collections::BTreeSet;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VerilogError {
    #[error("no module declaration found")]
    NoModuleDecl,
}

/// One `module ... endmodule` region (or a body-less declaration, as found
/// in interface header fragments).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModuleDecl {
    pub name: String,
    /// Byte range of the name identifier in the original text.
    pub name_span: (usize, usize),
    /// Declared port names, in declaration order.
    pub ports: Vec<String>,
    /// Byte range from the `module` keyword to the end of `endmodule`
    /// (or to the end of the declaration when there is no body).
    pub span: (usize, usize),
    pub has_body: bool,
    /// Byte range of the label identifier in `endmodule : name`, if any.
    pub label_span: Option<(usize, usize)>,
}

impl ModuleDecl {
    pub fn port_set(&self) -> BTreeSet<&str> {
        self.ports.iter().map(|s| s.as_str()).collect()
    }
}

/// Replaces comment bytes with spaces, preserving length and newlines.
/// With `mask_strings`, string literal contents are blanked too.
pub fn mask(src: &str, mask_strings: bool) -> String {
    #[derive(PartialEq)]
    enum St {
        Code,
        Line,
        Block,
        Str,
    }
    let bytes = src.as_bytes();
    let mut out = bytes.to_vec();
    let mut st = St::Code;
    let mut i = 0;
    while i < bytes.len() {
        match st {
            St::Code => {
                if bytes[i] == b'/' && i + 1 < bytes.len() && bytes[i + 1] == b'/' {
                    st = St::Line;
                    out[i] = b' ';
                    out[i + 1] = b' ';
                    i += 2;
                } else if bytes[i] == b'/' && i + 1 < bytes.len() && bytes[i + 1] == b'*' {
                    st = St::Block;
                    out[i] = b' ';
                    out[i + 1] = b' ';
                    i += 2;
                } else if bytes[i] == b'"' {
                    st = St::Str;
                    if mask_strings {
                        out[i] = b' ';
                    }
                    i += 1;
                } else {
                    i += 1;
                }
            }
            St::Line => {
                if bytes[i] == b'\n' {
                    st = St::Code;
                } else {
                    out[i] = b' ';
                }
                i += 1;
            }
            St::Block => {
                if bytes[i] == b'*' && i + 1 < bytes.len() && bytes[i + 1] == b'/' {
                    out[i] = b' ';
                    out[i + 1] = b' ';
                    st = St::Code;
                    i += 2;
                } else {
                    if bytes[i] != b'\n' {
                        out[i] = b' ';
                    }
                    i += 1;
                }
            }
            St::Str => {
                if bytes[i] == b'\\' && i + 1 < bytes.len() {
                    if mask_strings {
                        out[i] = b' ';
                        if bytes[i + 1] != b'\n' {
                            out[i + 1] = b' ';
                        }
                    }
                    i += 2;
                } else if bytes[i] == b'"' {
                    if mask_strings {
                        out[i] = b' ';
                    }
                    st = St::Code;
                    i += 1;
                } else {
                    if mask_strings && bytes[i] != b'\n' {
                        out[i] = b' ';
                    }
                    i += 1;
                }
            }
        }
    }
    // Masking only ever rewrites ASCII bytes to ' ', so the result is
    // valid UTF-8 whenever the input was.
    String::from_utf8(out).unwrap_or_else(|e| {
        String::from_utf8_lossy(e.as_bytes()).into_owned()
    })
}

fn is_ident_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_' || b == b'$'
}

fn is_ident_start(b: u8) -> bool {
    b.is_ascii_alphabetic() || b == b'_'
}

/// Reads the identifier starting at `pos`, if any.
fn ident_at(masked: &[u8], pos: usize) -> Option<(usize, usize)> {
    if pos >= masked.len() || !is_ident_start(masked[pos]) {
        return None;
    }
    let mut end = pos + 1;
    while end < masked.len() && is_ident_byte(masked[end]) {
        end += 1;
    }
    Some((pos, end))
}

fn skip_ws(masked: &[u8], mut pos: usize) -> usize {
    while pos < masked.len() && masked[pos].is_ascii_whitespace() {
        pos += 1;
    }
    pos
}

/// Skips a balanced `(...)` group starting at an opening paren. Returns the
/// position just past the matching close, or `len` when unbalanced.
fn skip_group(masked: &[u8], open_at: usize) -> usize {
    let mut depth = 0usize;
    let mut i = open_at;
    while i < masked.len() {
        match masked[i] {
            b'(' => depth += 1,
            b')' => {
                depth = depth.saturating_sub(1);
                if depth == 0 {
                    return i + 1;
                }
            }
            _ => {}
        }
        i += 1;
    }
    masked.len()
}

const PORT_KEYWORDS: &[&str] = &[
    "input", "output", "inout", "wire", "tri", "reg", "logic", "var", "bit", "byte", "int",
    "integer", "longint", "shortint", "real", "time", "signed", "unsigned", "parameter",
    "localparam", "supply0", "supply1", "wand", "wor", "uwire",
];

/// Extracts port names from the text inside a module's port parentheses.
fn ports_from_group(group: &str) -> Vec<String> {
    let bytes = group.as_bytes();
    let mut chunks: Vec<(usize, usize)> = Vec::new();
    let mut depth = 0i32;
    let mut start = 0usize;
    for (i, &b) in bytes.iter().enumerate() {
        match b {
            b'(' | b'[' | b'{' => depth += 1,
            b')' | b']' | b'}' => depth -= 1,
            b',' if depth == 0 => {
                chunks.push((start, i));
                start = i + 1;
            }
            _ => {}
        }
    }
    chunks.push((start, bytes.len()));

    let mut names = Vec::new();
    for (s, e) in chunks {
        let chunk = &group[s..e];
        // Drop default-value tails and bracketed dimension groups, then the
        // last remaining identifier is the port name.
        let chunk = chunk.split('=').next().unwrap_or("");
        let mut flat = String::with_capacity(chunk.len());
        let mut bdepth = 0i32;
        for ch in chunk.chars() {
            match ch {
                '[' => bdepth += 1,
                ']' => bdepth = (bdepth - 1).max(0),
                c if bdepth == 0 => flat.push(c),
                _ => {}
            }
        }
        let mut last: Option<String> = None;
        let fbytes = flat.as_bytes();
        let mut i = 0;
        while i < fbytes.len() {
            if let Some((a, b)) = ident_at(fbytes, i) {
                let word = &flat[a..b];
                if !PORT_KEYWORDS.contains(&word) {
                    last = Some(word.to_string());
                }
                i = b;
            } else {
                i += 1;
            }
        }
        if let Some(name) = last {
            names.push(name);
        }
    }
    names
}

/// Scans for module declarations. Tolerates arbitrary garbage around and
/// between modules; a declaration without a matching `endmodule` is reported
/// with `has_body = false` (interface header fragments take this shape).
pub fn find_modules(src: &str) -> Vec<ModuleDecl> {
    let masked = mask(src, true);
    let mb = masked.as_bytes();
    let mut out = Vec::new();
    let mut i = 0usize;
    while i < mb.len() {
        // Find the next `module` keyword at a word boundary.
        let Some(rel) = masked[i..].find("module") else { break };
        let at = i + rel;
        let before_ok = at == 0 || !is_ident_byte(mb[at - 1]);
        let after = at + "module".len();
        let after_ok = after >= mb.len() || !is_ident_byte(mb[after]);
        if !before_ok || !after_ok {
            i = at + 1;
            continue;
        }

        let mut pos = skip_ws(mb, after);
        let Some((ns, ne)) = ident_at(mb, pos) else {
            i = after;
            continue;
        };
        let name = src[ns..ne].to_string();
        pos = skip_ws(mb, ne);
        if pos < mb.len() && mb[pos] == b'#' {
            pos = skip_ws(mb, pos + 1);
            if pos < mb.len() && mb[pos] == b'(' {
                pos = skip_group(mb, pos);
            }
        }
        pos = skip_ws(mb, pos);
        let mut ports = Vec::new();
        if pos < mb.len() && mb[pos] == b'(' {
            let close = skip_group(mb, pos);
            let inner = &masked[pos + 1..close.saturating_sub(1).max(pos + 1)];
            ports = ports_from_group(inner);
            pos = close;
        }
        // The declaration runs to the next `;`.
        while pos < mb.len() && mb[pos] != b';' {
            pos += 1;
        }
        let decl_end = (pos + 1).min(mb.len());

        // Body: up to the next `endmodule` keyword, if present.
        let mut has_body = false;
        let mut span_end = decl_end;
        let mut label_span = None;
        let mut search = decl_end;
        while let Some(rel) = masked[search..].find("endmodule") {
            let eat = search + rel;
            let b_ok = eat == 0 || !is_ident_byte(mb[eat - 1]);
            let eafter = eat + "endmodule".len();
            let a_ok = eafter >= mb.len() || !is_ident_byte(mb[eafter]);
            if b_ok && a_ok {
                has_body = true;
                span_end = eafter;
                let mut p = skip_ws(mb, eafter);
                if p < mb.len() && mb[p] == b':' {
                    p = skip_ws(mb, p + 1);
                    if let Some((ls, le)) = ident_at(mb, p) {
                        label_span = Some((ls, le));
                        span_end = le;
                    }
                }
                break;
            }
            search = eat + 1;
        }

        out.push(ModuleDecl {
            name,
            name_span: (ns, ne),
            ports,
            span: (at, span_end),
            has_body,
            label_span,
        });
        i = span_end.max(at + 1);
    }
    out
}

/// Picks the module that should be treated as the design top: the one whose
/// port name set equals `header_ports` (last match wins), otherwise the last
/// module in the file.
pub fn pick_top<'a>(modules: &'a [ModuleDecl], header_ports: &[String]) -> Option<&'a ModuleDecl> {
    if modules.is_empty() {
        return None;
    }
    let want: BTreeSet<&str> = header_ports.iter().map(|s| s.as_str()).collect();
    if !want.is_empty() {
        if let Some(m) = modules.iter().rev().find(|m| m.port_set() == want) {
            return Some(m);
        }
    }
    modules.last()
}

/// Rewrites the top module's declared name (and a matching `endmodule`
/// label) to `new_name`, preserving every other byte. Renaming to the name
/// the module already has returns the input unchanged.
pub fn rename_top(
    src: &str,
    header_ports: &[String],
    new_name: &str,
) -> Result<String, VerilogError> {
    let modules = find_modules(src);
    let top = pick_top(&modules, header_ports).ok_or(VerilogError::NoModuleDecl)?;
    if top.name == new_name {
        let label_ok = match top.label_span {
            Some((s, e)) => &src[s..e] == new_name,
            None => true,
        };
        if label_ok {
            return Ok(src.to_string());
        }
    }
    let mut spans = vec![top.name_span];
    if let Some((s, e)) = top.label_span {
        if &src[s..e] == top.name {
            spans.push((s, e));
        }
    }
    spans.sort();
    let mut out = String::with_capacity(src.len());
    let mut cursor = 0;
    for (s, e) in spans {
        out.push_str(&src[cursor..s]);
        out.push_str(new_name);
        cursor = e;
    }
    out.push_str(&src[cursor..]);
    Ok(out)
}

/// True when `src` instantiates a module named `type_name` (as opposed to
/// declaring it): the name appears outside comments/strings, is not preceded
/// by the `module` keyword, and is followed by `#` or an instance name.
pub fn instantiates(src: &str, type_name: &str) -> bool {
    let masked = mask(src, true);
    let mb = masked.as_bytes();
    let mut i = 0;
    while let Some(rel) = masked[i..].find(type_name) {
        let at = i + rel;
        let end = at + type_name.len();
        let bounded = (at == 0 || !is_ident_byte(mb[at - 1]))
            && (end >= mb.len() || !is_ident_byte(mb[end]));
        if bounded {
            // Reject `module <type_name>`.
            let mut back = at;
            while back > 0 && mb[back - 1].is_ascii_whitespace() {
                back -= 1;
            }
            let declared = back >= 6 && &masked[back - 6..back] == "module"
                && (back == 6 || !is_ident_byte(mb[back - 7]));
            if !declared {
                let p = skip_ws(mb, end);
                if p < mb.len() && (mb[p] == b'#' || is_ident_start(mb[p])) {
                    return true;
                }
            }
        }
        i = end;
    }
    false
}

/// Comment-insensitive, whitespace-collapsed form of the source. String
/// literal contents are preserved.
pub fn normalize(src: &str) -> String {
    let masked = mask(src, false);
    let mut out = String::with_capacity(masked.len());
    let mut in_ws = true;
    for ch in masked.chars() {
        if ch.is_whitespace() {
            if !in_ws {
                out.push(' ');
                in_ws = true;
            }
        } else {
            out.push(ch);
            in_ws = false;
        }
    }
    while out.ends_with(' ') {
        out.pop();
    }
    out
}

/// Content digest that ignores comments, whitespace, and the top module's
/// name. Used to recognize "textually the same design" across renames.
pub fn fingerprint(src: &str) -> String {
    use sha2::{Digest, Sha256};
    let canonical = rename_top(src, &[], "__dut").unwrap_or_else(|_| src.to_string());
    let mut hasher = Sha256::new();
    hasher.update(normalize(&canonical).as_bytes());
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for b in digest {
        hex.push_str(&format!("{b:02x}"));
    }
    hex
}
