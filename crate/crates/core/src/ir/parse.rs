use std::collections::BTreeMap;

use super::{CmpOp, Guard, Instruction, Opcode, Operand, Program, Register};
use crate::regset::MAX_REGISTERS;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {reason}")]
pub struct SyntaxError {
    /// 1-based source line; 0 when the error is not tied to a line.
    pub line: usize,
    pub reason: String,
}

impl SyntaxError {
    pub fn new(line: usize, reason: impl Into<String>) -> Self {
        SyntaxError { line, reason: reason.into() }
    }
}

/// Parses PTX-subset source text, one instruction per line.
///
/// A line may carry a label (`L1:`), a guard (`@p`, `@!p`), an opcode with
/// optional type suffixes, and comma-separated operands. `#` starts a
/// comment and a trailing `;` is ignored. A label on a line of its own
/// attaches to the next instruction.
pub fn parse_program(text: &str) -> Result<Program, SyntaxError> {
    parse_with_lines(text).map(|(p, _)| p)
}

/// Parses and also returns the 1-based source line of every instruction.
pub(crate) fn parse_with_lines(text: &str) -> Result<(Program, Vec<usize>), SyntaxError> {
    let mut lines = Vec::new();
    let mut instructions = Vec::new();
    let mut labels = BTreeMap::new();
    let mut branch_lines = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let mut rest = raw.split('#').next().unwrap_or("").trim();
        rest = rest.strip_suffix(';').unwrap_or(rest).trim_end();

        while let Some((label, after)) = split_label(rest) {
            if labels.insert(label.to_string(), instructions.len()).is_some() {
                return Err(SyntaxError::new(line, format!("duplicate label `{label}`")));
            }
            rest = after.trim_start();
        }
        if rest.is_empty() {
            continue;
        }
        let inst = parse_instruction(rest).map_err(|reason| SyntaxError::new(line, reason))?;
        if inst.is_branch() {
            branch_lines.push((instructions.len(), line));
        }
        instructions.push(inst);
        lines.push(line);
    }

    let program = Program { instructions, labels };
    for (pc, line) in branch_lines {
        let target = program.instructions[pc].target.as_deref().unwrap_or_default();
        if !program.labels.contains_key(target) {
            return Err(SyntaxError::new(line, format!("unresolved label `{target}`")));
        }
    }
    if let Some((name, _)) = program.labels.iter().find(|(_, &idx)| idx >= program.instructions.len()) {
        return Err(SyntaxError::new(0, format!("label `{name}` does not precede an instruction")));
    }
    program.validate()?;
    Ok((program, lines))
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_' || c == '$')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '$')
}

fn split_label(s: &str) -> Option<(&str, &str)> {
    let (head, tail) = s.split_once(':')?;
    let head = head.trim();
    is_ident(head).then_some((head, tail))
}

fn parse_instruction(text: &str) -> Result<Instruction, String> {
    let mut rest = text;
    let mut guard = None;
    if let Some(g) = rest.strip_prefix('@') {
        let (tok, after) = split_token(g);
        let (negated, name) = match tok.strip_prefix('!') {
            Some(n) => (true, n),
            None => (false, tok),
        };
        let pred = parse_register(name)
            .filter(Register::is_predicate)
            .ok_or_else(|| format!("malformed guard `@{tok}`"))?;
        guard = Some(Guard { pred, negated });
        rest = after;
    }

    let (mnemonic, operand_text) = split_token(rest);
    if mnemonic.is_empty() {
        return Err("missing opcode".into());
    }
    let opcode = parse_opcode(mnemonic)?;
    let operand_text = operand_text.trim();
    let operands: Vec<&str> = if operand_text.is_empty() {
        Vec::new()
    } else {
        operand_text.split(',').map(str::trim).collect()
    };

    let mut inst = match opcode {
        Opcode::Bra | Opcode::Call => {
            let [target] = operands.as_slice() else {
                return Err(format!("`{mnemonic}` takes exactly one target"));
            };
            if !is_ident(target) {
                return Err(format!("malformed target `{target}`"));
            }
            Instruction { target: Some(target.to_string()), ..Instruction::new(opcode, None, vec![]) }
        }
        Opcode::Exit => {
            if !operands.is_empty() {
                return Err("`exit` takes no operands".into());
            }
            Instruction::exit()
        }
        Opcode::StLocal => {
            let (sources, dead) = parse_sources(&operands)?;
            let mut i = Instruction::new(opcode, None, sources);
            i.dead_operand_bits = dead;
            i
        }
        _ => {
            let Some((dest, srcs)) = operands.split_first() else {
                return Err(format!("`{mnemonic}` needs a destination"));
            };
            let dest = parse_register(dest).ok_or_else(|| format!("malformed destination `{dest}`"))?;
            let (sources, dead) = parse_sources(srcs)?;
            let mut i = Instruction::new(opcode, Some(dest), sources);
            i.dead_operand_bits = dead;
            i
        }
    };
    inst.guard = guard;
    inst.validate()?;
    Ok(inst)
}

fn split_token(s: &str) -> (&str, &str) {
    let s = s.trim_start();
    match s.find(char::is_whitespace) {
        Some(pos) => (&s[..pos], &s[pos..]),
        None => (s, ""),
    }
}

fn parse_opcode(mnemonic: &str) -> Result<Opcode, String> {
    let unknown = || format!("unknown opcode `{mnemonic}`");
    let mut parts = mnemonic.split('.');
    let head = parts.next().unwrap_or_default();
    let mut rest: Vec<&str> = parts.collect();
    let op = match head {
        "mov" => Opcode::Mov,
        "add" => Opcode::Add,
        "bra" => Opcode::Bra,
        "call" => Opcode::Call,
        "exit" => Opcode::Exit,
        "ld" | "st" => {
            if rest.first() != Some(&"local") {
                return Err(unknown());
            }
            rest.remove(0);
            if head == "ld" {
                Opcode::LdLocal
            } else {
                Opcode::StLocal
            }
        }
        "set" | "setp" => {
            let cmp = rest.first().and_then(|c| CmpOp::from_mnemonic(c)).ok_or_else(unknown)?;
            rest.remove(0);
            Opcode::SetCmp(cmp)
        }
        _ => return Err(unknown()),
    };
    const SUFFIXES: [&str; 8] = ["u32", "s32", "b32", "u64", "s64", "b64", "pred", "uni"];
    if rest.iter().all(|s| SUFFIXES.contains(s)) {
        Ok(op)
    } else {
        Err(unknown())
    }
}

/// `R<n>` and `%r<n>` are general registers; `P<n>`, `%p<n>` and the
/// single letters `p`..`z` are predicates.
pub(super) fn parse_register(tok: &str) -> Option<Register> {
    let tok = tok.trim();
    let (class_pred, digits) = if let Some(d) = tok.strip_prefix("%r").or_else(|| tok.strip_prefix('R')) {
        (false, d)
    } else if let Some(d) = tok.strip_prefix("%p").or_else(|| tok.strip_prefix('P')) {
        (true, d)
    } else {
        let mut chars = tok.chars();
        return match (chars.next(), chars.next()) {
            (Some(c @ 'p'..='z'), None) => Some(Register::predicate(c as u16 - 'p' as u16)),
            _ => None,
        };
    };
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let index: u16 = digits.parse().ok()?;
    if index as usize >= MAX_REGISTERS {
        return None;
    }
    Some(if class_pred { Register::predicate(index) } else { Register::general(index) })
}

fn parse_sources(tokens: &[&str]) -> Result<(Vec<Operand>, Vec<bool>), String> {
    let mut ops = Vec::with_capacity(tokens.len());
    let mut dead = Vec::with_capacity(tokens.len());
    for tok in tokens {
        let (tok, is_dead) = match tok.strip_suffix('^') {
            Some(t) => (t.trim_end(), true),
            None => (*tok, false),
        };
        let op = parse_operand(tok).ok_or_else(|| format!("malformed operand `{tok}`"))?;
        if is_dead && op.register().is_none() {
            return Err(format!("dead marker on non-register operand `{tok}`"));
        }
        ops.push(op);
        dead.push(is_dead);
    }
    Ok((ops, dead))
}

fn parse_operand(tok: &str) -> Option<Operand> {
    if tok.is_empty() {
        return None;
    }
    if let Some(inner) = tok.strip_prefix('[').and_then(|t| t.strip_suffix(']')) {
        let inner: String = inner.chars().filter(|c| !c.is_whitespace()).collect();
        let split = inner.find(['+', '-']);
        let (base, offset) = match split {
            Some(pos) => (&inner[..pos], parse_int(&inner[pos..])?),
            None => (inner.as_str(), 0),
        };
        let base = parse_register(base)?;
        return Some(Operand::Addr { base, offset: i32::try_from(offset).ok()? });
    }
    if let Some(r) = parse_register(tok) {
        return Some(Operand::Reg(r));
    }
    if let Some(v) = parse_int(tok) {
        return Some(Operand::Imm(v));
    }
    is_ident(tok).then(|| Operand::Param(tok.to_string()))
}

fn parse_int(tok: &str) -> Option<i64> {
    let (neg, body) = match tok.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, tok.strip_prefix('+').unwrap_or(tok)),
    };
    let v = match body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        Some(hex) => i64::from_str_radix(hex, 16).ok()?,
        None if !body.is_empty() && body.bytes().all(|b| b.is_ascii_digit()) => body.parse().ok()?,
        None => return None,
    };
    Some(if neg { -v } else { v })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registers() {
        assert_eq!(parse_register("R12"), Some(Register::general(12)));
        assert_eq!(parse_register("%r3"), Some(Register::general(3)));
        assert_eq!(parse_register("p"), Some(Register::predicate(0)));
        assert_eq!(parse_register("q"), Some(Register::predicate(1)));
        assert_eq!(parse_register("P7"), Some(Register::predicate(7)));
        assert_eq!(parse_register("R256"), None);
        assert_eq!(parse_register("A"), None);
    }

    #[test]
    fn operands() {
        assert_eq!(parse_operand("[R0]"), Some(Operand::Addr { base: Register::general(0), offset: 0 }));
        assert_eq!(parse_operand("[R0 + 8]"), Some(Operand::Addr { base: Register::general(0), offset: 8 }));
        assert_eq!(parse_operand("[R2-4]"), Some(Operand::Addr { base: Register::general(2), offset: -4 }));
        assert_eq!(parse_operand("0x10"), Some(Operand::Imm(16)));
        assert_eq!(parse_operand("-3"), Some(Operand::Imm(-3)));
        assert_eq!(parse_operand("A"), Some(Operand::Param("A".into())));
        assert_eq!(parse_operand("[A]"), None);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = parse_program("mov.u32 R0, 1\nfrob R1\n").unwrap_err();
        assert_eq!(err.line, 2);
        assert!(err.reason.contains("unknown opcode"));
        let err = parse_program("exit\nbra L9\n").unwrap_err();
        assert_eq!(err.line, 2);
        assert!(err.reason.contains("unresolved label"));
        assert!(parse_program("mov.u32 R0").is_err());
        assert!(parse_program("set.eq.u32.u32 R0, R1, R2").is_err());
        assert!(parse_program("ld.global.u32 R0, [R1]").is_err());
        assert!(parse_program("L: L: exit").is_err());
        assert!(parse_program("exit\nEND:").is_err());
    }

    #[test]
    fn labels_and_comments() {
        let p = parse_program("# header\nA:\nB: mov.u32 R0, 1 # trailing\n  exit;\n").unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p.labels["A"], 0);
        assert_eq!(p.labels["B"], 0);
    }

    #[test]
    fn guard_polarity() {
        let p = parse_program("L: @!p bra L\n@q bra L").unwrap();
        assert_eq!(p.instructions[0].guard, Some(Guard { pred: Register::predicate(0), negated: true }));
        assert_eq!(p.instructions[1].guard, Some(Guard { pred: Register::predicate(1), negated: false }));
        assert!(parse_program("@R1 exit").is_err());
    }
}
