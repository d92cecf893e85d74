//! Reads an SMT-LIB2 script from stdin, evaluates it, and prints the
//! solver output (check-sat verdicts, models, errors) to stdout.
//!
//! Usage: z3smt < query.smt2

use std::ffi::{CStr, CString};
use std::io::Read;
use std::process::ExitCode;

/// Keep script-level errors (e.g. `get-model` after `unsat`) in-band:
/// the evaluator reports them as `(error ...)` lines in its output, and
/// the default handler would instead abort the process.
unsafe extern "C" fn ignore_error(_ctx: z3_sys::Z3_context, _code: z3_sys::ErrorCode) {}

fn main() -> ExitCode {
    let mut script = String::new();
    if let Err(err) = std::io::stdin().read_to_string(&mut script) {
        eprintln!("z3smt: failed to read stdin: {err}");
        return ExitCode::from(2);
    }
    let script = match CString::new(script) {
        Ok(s) => s,
        Err(_) => {
            eprintln!("z3smt: input contains a NUL byte");
            return ExitCode::from(2);
        }
    };
    unsafe {
        let cfg = z3_sys::Z3_mk_config();
        if cfg.is_null() {
            eprintln!("z3smt: Z3_mk_config failed");
            return ExitCode::from(2);
        }
        let ctx = z3_sys::Z3_mk_context(cfg);
        if ctx.is_null() {
            z3_sys::Z3_del_config(cfg);
            eprintln!("z3smt: Z3_mk_context failed");
            return ExitCode::from(2);
        }
        z3_sys::Z3_del_config(cfg);
        z3_sys::Z3_set_error_handler(ctx, Some(ignore_error));
        let out = z3_sys::Z3_eval_smtlib2_string(ctx, script.as_ptr());
        if !out.is_null() {
            let text = CStr::from_ptr(out).to_string_lossy();
            print!("{text}");
            if !text.ends_with('\n') {
                println!();
            }
        }
        z3_sys::Z3_del_context(ctx);
    }
    ExitCode::SUCCESS
}
