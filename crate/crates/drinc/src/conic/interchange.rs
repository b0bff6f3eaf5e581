//! JSON interchange format for conic programs.
//!
//! A program is one JSON object `{vars, objective, eq, ineq, soc, psd}`.
//! Expressions are sparse: `{"terms": [[index, coeff], ...], "constant": c}`.
//! `soc` entries are rotated cones `{u, v, w}`; `psd` entries carry the
//! packed upper triangle `{dim, tri}` in column-major order. Coefficients
//! round-trip bit-exactly (shortest-representation float encoding).

use serde::{Deserialize, Serialize};

use super::{ConicError, ConicProgram, ExprMatrix, LinExpr, PsdBlock, RsocBlock};

#[derive(Serialize, Deserialize)]
struct VarDecl {
    name: String,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct ProgramFile {
    vars: Vec<VarDecl>,
    objective: LinExpr,
    eq: Vec<LinExpr>,
    ineq: Vec<LinExpr>,
    soc: Vec<RsocBlock>,
    psd: Vec<PsdBlock>,
}

pub fn to_json(prog: &ConicProgram) -> String {
    let file = ProgramFile {
        vars: prog
            .var_blocks()
            .iter()
            .map(|(name, b)| VarDecl { name: name.clone(), len: b.len })
            .collect(),
        objective: prog.objective().clone(),
        eq: prog.eq_constraints().to_vec(),
        ineq: prog.nonneg_constraints().to_vec(),
        soc: prog.rsoc_constraints().to_vec(),
        psd: prog.psd_constraints().to_vec(),
    };
    serde_json::to_string_pretty(&file).expect("conic program serialization cannot fail")
}

pub fn from_json(text: &str) -> Result<ConicProgram, ConicError> {
    let file: ProgramFile =
        serde_json::from_str(text).map_err(|e| ConicError::Parse(e.to_string()))?;
    let mut prog = ConicProgram::new();
    for decl in &file.vars {
        prog.add_vars(&decl.name, decl.len);
    }
    prog.set_objective(file.objective)?;
    for e in file.eq {
        prog.add_eq(e)?;
    }
    for e in file.ineq {
        prog.add_nonneg(e)?;
    }
    for r in file.soc {
        prog.add_rsoc(r.u, r.v, r.w)?;
    }
    for p in file.psd {
        let n = p.dim;
        if p.tri.len() != n * (n + 1) / 2 {
            return Err(ConicError::Parse(format!(
                "psd block of dim {n} carries {} triangle entries",
                p.tri.len()
            )));
        }
        let mut m = ExprMatrix::zeros(n, n);
        let mut k = 0usize;
        for j in 0..n {
            for i in 0..=j {
                m.set(i, j, p.tri[k].clone());
                if i != j {
                    m.set(j, i, p.tri[k].clone());
                }
                k += 1;
            }
        }
        prog.add_psd_block(m)?;
    }
    Ok(prog)
}
