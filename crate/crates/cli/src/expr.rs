//! Forcing given as expressions in `t` and the state components.
//!
//! Variables: `t`, and for each component k of the state `re_xk` and `im_xk`
//! (`re_x`/`im_x` alias component 0). Besides the `math::` builtins the
//! bare names `sin cos tan exp ln sqrt abs sinh cosh tanh atan` are
//! available.

use evalexpr::{
    build_operator_tree, Context, DefaultNumericTypes, EvalexprError, EvalexprResult, Node,
    Value,
};
use impfrac::{CVector, Complex64};

type V = Value<DefaultNumericTypes>;

type Builtin = (&'static str, fn(f64) -> f64);

const FUNCTIONS: [Builtin; 11] = [
    ("sin", f64::sin),
    ("cos", f64::cos),
    ("tan", f64::tan),
    ("exp", f64::exp),
    ("ln", f64::ln),
    ("sqrt", f64::sqrt),
    ("abs", f64::abs),
    ("sinh", f64::sinh),
    ("cosh", f64::cosh),
    ("tanh", f64::tanh),
    ("atan", f64::atan),
];

struct Vars {
    names: Vec<String>,
    values: Vec<V>,
}

impl Context for Vars {
    type NumericTypes = DefaultNumericTypes;

    fn get_value(&self, identifier: &str) -> Option<&V> {
        self.names.iter().position(|n| n == identifier).map(|i| &self.values[i])
    }

    fn call_function(&self, identifier: &str, argument: &V) -> EvalexprResult<V, DefaultNumericTypes> {
        let f = FUNCTIONS
            .iter()
            .find(|(n, _)| *n == identifier)
            .ok_or_else(|| EvalexprError::FunctionIdentifierNotFound(identifier.to_string()))?;
        Ok(Value::Float(f.1(argument.as_number()?)))
    }

    fn are_builtin_functions_disabled(&self) -> bool {
        false
    }

    fn set_builtin_functions_disabled(&mut self, _: bool) -> EvalexprResult<(), DefaultNumericTypes> {
        Err(EvalexprError::ContextNotMutable)
    }
}

/// One compiled component: real part and optional imaginary part.
struct Component {
    re: Node<DefaultNumericTypes>,
    im: Option<Node<DefaultNumericTypes>>,
}

pub struct ExprForcing {
    components: Vec<Component>,
    names: Vec<String>,
    state_dependent: bool,
}

impl ExprForcing {
    /// Compiles `(re, im)` expression pairs for a state of dimension `dim`.
    pub fn compile(parts: &[(String, Option<String>)], dim: usize) -> Result<Self, String> {
        if parts.len() != dim {
            return Err(format!("expression forcing has {} components, state has {dim}", parts.len()));
        }
        let mut names = vec!["t".to_string()];
        for k in 0..dim {
            names.push(format!("re_x{k}"));
            names.push(format!("im_x{k}"));
        }
        names.push("re_x".into());
        names.push("im_x".into());
        let mut state_dependent = false;
        let mut compile = |src: &str| -> Result<Node<DefaultNumericTypes>, String> {
            let node = build_operator_tree::<DefaultNumericTypes>(src).map_err(|e| format!("`{src}`: {e}"))?;
            for v in node.iter_variable_identifiers() {
                if !names.iter().any(|n| n == v) {
                    return Err(format!("`{src}`: unknown variable `{v}`"));
                }
                state_dependent |= v != "t";
            }
            for f in node.iter_function_identifiers() {
                if !f.starts_with("math::") && !FUNCTIONS.iter().any(|(n, _)| *n == f) {
                    return Err(format!("`{src}`: unknown function `{f}`"));
                }
            }
            Ok(node)
        };
        let mut components = Vec::with_capacity(dim);
        for (re, im) in parts {
            let re = compile(re)?;
            let im = im.as_deref().map(&mut compile).transpose()?;
            components.push(Component { re, im });
        }
        let forcing = ExprForcing { components, names, state_dependent };
        // surface type errors (e.g. boolean results) at load time
        forcing.try_eval(0.0, &CVector::zeros(dim))?;
        Ok(forcing)
    }

    pub fn is_state_dependent(&self) -> bool {
        self.state_dependent
    }

    fn try_eval(&self, t: f64, x: &CVector) -> Result<CVector, String> {
        let mut values = vec![Value::Float(t)];
        for z in x.iter() {
            values.push(Value::Float(z.re));
            values.push(Value::Float(z.im));
        }
        values.push(Value::Float(x[0].re));
        values.push(Value::Float(x[0].im));
        let vars = Vars { names: self.names.clone(), values };
        let num = |n: &Node<DefaultNumericTypes>| n.eval_number_with_context(&vars).map_err(|e| e.to_string());
        let mut out = CVector::zeros(self.components.len());
        for (k, c) in self.components.iter().enumerate() {
            let im = c.im.as_ref().map(num).transpose()?.unwrap_or(0.0);
            out[k] = Complex64::new(num(&c.re)?, im);
        }
        Ok(out)
    }

    /// Evaluates; an expression failing at run time (e.g. `ln` of a
    /// negative value is NaN, not an error) yields NaN components.
    pub fn eval(&self, t: f64, x: &CVector) -> CVector {
        self.try_eval(t, x).unwrap_or_else(|_| CVector::from_element(self.components.len(), Complex64::new(f64::NAN, f64::NAN)))
    }
}
