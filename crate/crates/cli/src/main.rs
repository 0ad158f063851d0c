use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use csp_dichotomy::algebra::Algebra;
use csp_dichotomy::duality::{classify, fo_recognize, harvest_obstructions, verify_duality, Budgets, Verdict};
use csp_dichotomy::error::{Error, Result};
use csp_dichotomy::hardness::{
    emit_reduction_finite, emit_reduction_orbit, implication_digraph, source_template, verify_reduction,
    HardnessWitness, Reduction, Target,
};
use csp_dichotomy::implications::{search_balanced, search_equality_definition, BalancedOutcome, HarvestShape};
use csp_dichotomy::io;
use csp_dichotomy::minimality::{apply_domains, build_imax, derivation_to_tree, kl_minimality, one_minimality, DomainMap};
use csp_dichotomy::orbits::{builtin, solve_orbit, OrbitMode, OrbitTemplate, OrbitVerdict};
use csp_dichotomy::relcore::{instance_to_structure, solve_brute, Instance};

const EXIT_OK: u8 = 0;
const EXIT_UNSAT: u8 = 10;
const EXIT_L_HARD: u8 = 20;
const EXIT_UNKNOWN: u8 = 30;
const EXIT_USAGE: u8 = 1;
const EXIT_CHECK_FAILED: u8 = 2;

#[derive(Parser)]
#[command(name = "cspd", version, about = "Classify and solve constraint satisfaction problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct TemplateArgs {
    /// Finite template file.
    #[arg(long, conflicts_with = "orbit")]
    template: Option<PathBuf>,
    /// Built-in orbit template (QLT, RGEN, RGEN_PHI, TFG) or an orbit template file.
    #[arg(long)]
    orbit: Option<String>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Args, Clone)]
struct BudgetArgs {
    #[arg(long, default_value_t = 6)]
    max_atoms: usize,
    #[arg(long, default_value_t = 4)]
    verify_n: u32,
    /// Verification depth for reductions into orbit templates.
    #[arg(long, default_value_t = 3)]
    orbit_verify_n: u32,
    #[arg(long, default_value_t = 4)]
    obstruction_budget: u32,
}

#[derive(Subcommand)]
enum Command {
    /// Decide an instance.
    Solve {
        #[command(flatten)]
        t: TemplateArgs,
        #[arg(long)]
        instance: PathBuf,
    },
    /// Run the minimality fixpoint and print the domains.
    Minimize {
        #[command(flatten)]
        t: TemplateArgs,
        #[arg(long)]
        instance: PathBuf,
        /// Print a tree formula for every narrowed domain.
        #[arg(long)]
        certify: bool,
        /// Write the filtered instance here.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Look for a hardness witness, then for a finite obstruction set.
    Classify {
        #[command(flatten)]
        t: TemplateArgs,
        #[command(flatten)]
        b: BudgetArgs,
        /// Write the graph of harvested atom implications here.
        #[arg(long)]
        dot: Option<PathBuf>,
    },
    /// Harvest obstructions up to a size budget and print them.
    Obstructions {
        #[command(flatten)]
        t: TemplateArgs,
        #[arg(long, default_value_t = 4)]
        budget: u32,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Emit and check a reduction from the two-element source problem.
    Reduce {
        #[command(flatten)]
        t: TemplateArgs,
        #[arg(long, default_value_t = 6)]
        max_atoms: usize,
        /// Print the interpretation.
        #[arg(long)]
        emit: bool,
        /// Check the reduction on all source structures with at most n elements.
        #[arg(long, value_name = "N")]
        verify: Option<u32>,
        /// Write the implication digraph of a balanced witness here.
        #[arg(long)]
        dot: Option<PathBuf>,
    },
    /// Check an obstruction set against the template, or run its recognizer on an instance.
    CheckDuality {
        #[command(flatten)]
        t: TemplateArgs,
        #[arg(long)]
        obstructions: PathBuf,
        #[arg(long, default_value_t = 4)]
        verify_n: u32,
        /// Only decide this instance with the obstruction set.
        #[arg(long)]
        instance: Option<PathBuf>,
    },
    /// Describe an orbit template.
    OrbitInfo {
        #[arg(long)]
        orbit: String,
        /// Write the graph of harvested atom implications here.
        #[arg(long)]
        dot: Option<PathBuf>,
        /// Write the template in file form.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Invalid(format!("cannot read {}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Invalid(format!("cannot write {}: {e}", path.display())))
}

fn load_orbit(spec: &str) -> Result<OrbitTemplate> {
    let path = Path::new(spec);
    if path.is_file() {
        io::parse_orbit_template(&read(path)?)
    } else {
        builtin(spec)
    }
}

/// The template with a display name.
fn load_target(t: &TemplateArgs) -> Result<(Target, String)> {
    match (&t.template, &t.orbit) {
        (Some(path), None) => {
            let file = io::parse_template(&read(path)?)?;
            let name = file.name.unwrap_or_else(|| path.display().to_string());
            Ok((Target::Finite(file.structure), name))
        }
        (None, Some(spec)) => {
            let o = load_orbit(spec)?;
            let name = o.name().to_string();
            Ok((Target::Orbit(o), name))
        }
        _ => Err(Error::Invalid("give exactly one of --template and --orbit".into())),
    }
}

fn print_domains<A: Algebra>(dm: &DomainMap<A::Point>, inst: &Instance<A::Point>, alg: &A) {
    for (set, dom) in dm.sets.iter().zip(&dm.domains) {
        let vars: Vec<&str> = set.iter().map(|&v| inst.variables[v].as_str()).collect();
        let points: Vec<String> = dom.iter().map(|p| alg.format_point(set.len(), p)).collect();
        println!("D({}) = {{{}}}", vars.join(", "), points.join(", "));
    }
}

fn print_certificates<P: Clone + Ord>(dm: &DomainMap<P>, inst: &Instance<P>) -> Result<()> {
    let versions = dm.versions();
    for (i, set) in dm.sets.iter().enumerate() {
        if versions[i].is_empty() {
            continue;
        }
        let vars: Vec<&str> = set.iter().map(|&v| inst.variables[v].as_str()).collect();
        let tree = derivation_to_tree(dm, set, None, inst)?;
        println!("certificate D({}): {}", vars.join(", "), tree.to_pp());
    }
    Ok(())
}

fn minimize_report<A: Algebra>(
    inst: &Instance<A::Point>,
    dm: &DomainMap<A::Point>,
    alg: &A,
    certify: bool,
) -> Result<u8> {
    print_domains(dm, inst, alg);
    if certify {
        print_certificates(dm, inst)?;
    }
    if dm.is_trivial() {
        println!("TRIVIAL");
        Ok(EXIT_UNSAT)
    } else {
        println!("NONTRIVIAL");
        Ok(EXIT_OK)
    }
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Solve { t, instance } => {
            let (target, _) = load_target(&t)?;
            let text = read(&instance)?;
            match target {
                Target::Finite(s) => {
                    let inst = io::parse_instance(&text, &s)?;
                    match solve_brute(&inst, &s)? {
                        Some(a) => {
                            println!("SAT");
                            for (v, e) in inst.variables.iter().zip(&a.0) {
                                println!("{v} = {e}");
                            }
                            Ok(EXIT_OK)
                        }
                        None => {
                            println!("UNSAT");
                            Ok(EXIT_UNSAT)
                        }
                    }
                }
                Target::Orbit(o) => {
                    let inst = io::parse_orbit_instance(&text, &o)?;
                    match solve_orbit(&inst, &o, OrbitMode::Search)? {
                        OrbitVerdict::Sat(w) => {
                            println!("SAT");
                            if let Some(w) = w {
                                println!("witness structure {}", w.structure);
                                for (v, e) in inst.variables.iter().zip(&w.assignment) {
                                    println!("{v} = {e}");
                                }
                            }
                            Ok(EXIT_OK)
                        }
                        OrbitVerdict::Unsat => {
                            println!("UNSAT");
                            Ok(EXIT_UNSAT)
                        }
                    }
                }
            }
        }
        Command::Minimize {
            t,
            instance,
            certify,
            output,
        } => {
            let (target, _) = load_target(&t)?;
            let text = read(&instance)?;
            match target {
                Target::Finite(s) => {
                    let inst = io::parse_instance(&text, &s)?;
                    let dm = one_minimality(&inst, &s)?;
                    if let Some(path) = output {
                        write(&path, &io::write_instance(&apply_domains(&inst, &dm, &s), &s))?;
                    }
                    minimize_report(&inst, &dm, &s, certify)
                }
                Target::Orbit(o) => {
                    let inst = build_imax(&io::parse_orbit_instance(&text, &o)?, &o, o.k(), o.l());
                    let dm = kl_minimality(&inst, &o, o.k(), o.l())?;
                    if let Some(path) = output {
                        write(&path, &io::write_orbit_instance(&apply_domains(&inst, &dm, &o), &o))?;
                    }
                    minimize_report(&inst, &dm, &o, certify)
                }
            }
        }
        Command::Classify { t, b, dot } => {
            let (target, name) = load_target(&t)?;
            let budgets = Budgets {
                max_atoms: b.max_atoms,
                verify_n: b.verify_n,
                orbit_verify_n: b.orbit_verify_n,
                obstruction_budget: b.obstruction_budget,
                jobs: t.jobs,
            };
            let mut report = classify(&target, &budgets)?;
            report.template = name;
            print!("{report}");
            if let Some(path) = dot {
                write(&path, &implication_graph_dot(&target, b.max_atoms)?)?;
            }
            Ok(match report.verdict {
                Verdict::FoDefinable { .. } => EXIT_OK,
                Verdict::LHard { .. } => EXIT_L_HARD,
                Verdict::Unknown => EXIT_UNKNOWN,
            })
        }
        Command::Obstructions { t, budget, output } => {
            let (target, _) = load_target(&t)?;
            let set = harvest_obstructions(&target, budget, t.jobs)?;
            let text = io::write_obstructions(&set);
            match output {
                Some(path) => write(&path, &text)?,
                None => print!("{text}"),
            }
            Ok(EXIT_OK)
        }
        Command::Reduce {
            t,
            max_atoms,
            emit,
            verify,
            dot,
        } => {
            let (target, _) = load_target(&t)?;
            let Some(reduction) = find_reduction(&target, max_atoms, dot.as_deref())? else {
                println!("no hardness witness within {max_atoms} atoms");
                return Ok(EXIT_UNKNOWN);
            };
            for n in &reduction.notes {
                println!("# {n}");
            }
            if emit {
                print!("{}", io::write_interpretation(&reduction.interpretation));
            }
            if let Some(n) = verify {
                let r = verify_reduction(&reduction.interpretation, &source_template(), &reduction.target, n, t.jobs)?;
                println!("{r}");
                if !r.passed() {
                    return Ok(EXIT_CHECK_FAILED);
                }
            }
            Ok(EXIT_L_HARD)
        }
        Command::CheckDuality {
            t,
            obstructions,
            verify_n,
            instance,
        } => {
            let (target, _) = load_target(&t)?;
            let set = io::parse_obstructions(&read(&obstructions)?)?;
            if let Some(path) = instance {
                let text = read(&path)?;
                let s = match &target {
                    Target::Finite(s) => instance_to_structure(&io::parse_instance(&text, s)?, s)?,
                    Target::Orbit(o) => instance_to_structure(&io::parse_orbit_instance(&text, o)?, o)?,
                };
                return Ok(if fo_recognize(&target.normalize(&s)?, &set)? {
                    println!("ACCEPT");
                    EXIT_OK
                } else {
                    println!("REJECT");
                    EXIT_UNSAT
                });
            }
            let r = verify_duality(&target, &set, verify_n, t.jobs)?;
            println!("{r}");
            Ok(if r.passed() { EXIT_OK } else { EXIT_CHECK_FAILED })
        }
        Command::OrbitInfo { orbit, dot, output } => {
            let o = load_orbit(&orbit)?;
            println!("name: {}", o.name());
            println!("k = {}, l = {}", o.k(), o.l());
            let base: Vec<String> = o.base().relations.iter().map(|r| format!("{}/{}", r.name, r.arity)).collect();
            println!("base: {}", base.join(", "));
            println!("bounds: {}", o.bounds().len());
            for b in o.bounds() {
                println!("  {b}");
            }
            for m in 1..=o.k() {
                println!("atomic types of arity {m}: {}", o.type_count(m));
                for id in 0..o.type_count(m) as u32 {
                    println!("  {id}: {}", o.describe_type(m, id));
                }
            }
            for (name, arity) in o.relation_symbols() {
                let (_, ext) = o.relation(&name).expect("listed relation");
                let ids: Vec<String> = ext.iter().map(u32::to_string).collect();
                println!("relation {name}/{arity}: types {{{}}}", ids.join(", "));
            }
            if let Some(path) = dot {
                write(&path, &implication_graph_dot(&Target::Orbit(o.clone()), 6)?)?;
            }
            if let Some(path) = output {
                write(&path, &io::write_orbit_template(&o))?;
            }
            Ok(EXIT_OK)
        }
    }
}

fn implication_graph_dot(target: &Target, max_atoms: usize) -> Result<String> {
    fn graph<A: Algebra>(alg: &A, shape: HarvestShape, max_atoms: usize) -> Result<String> {
        Ok(match search_balanced(alg, shape, max_atoms)? {
            BalancedOutcome::Witness { graph, .. } | BalancedOutcome::NoneWithinBudget { graph, .. } => graph.to_dot(alg),
        })
    }
    match target {
        Target::Finite(s) => graph(s, HarvestShape::finite(), max_atoms),
        Target::Orbit(o) => graph(o, HarvestShape::orbit(o.k()), max_atoms),
    }
}

/// Equality first, then a balanced implication, as in classification.
fn find_reduction(target: &Target, max_atoms: usize, dot: Option<&Path>) -> Result<Option<Reduction>> {
    fn witness<A: Algebra>(
        alg: &A,
        shape: HarvestShape,
        max_atoms: usize,
        dot: Option<&Path>,
    ) -> Result<Option<HardnessWitness<A::Point>>> {
        if let Some(f) = search_equality_definition(alg, max_atoms) {
            return Ok(Some(HardnessWitness::Equality(f)));
        }
        match search_balanced(alg, shape, max_atoms)? {
            BalancedOutcome::Witness { implication, .. } => {
                if let Some(path) = dot {
                    let arity = implication.u.len();
                    write(path, &implication_digraph(&implication, alg)?.to_dot(alg, arity))?;
                }
                Ok(Some(HardnessWitness::Balanced(implication)))
            }
            BalancedOutcome::NoneWithinBudget { .. } => Ok(None),
        }
    }
    match target {
        Target::Finite(s) => witness(s, HarvestShape::finite(), max_atoms, dot)?
            .map(|w| emit_reduction_finite(&w, s))
            .transpose(),
        Target::Orbit(o) => witness(o, HarvestShape::orbit(o.k()), max_atoms, dot)?
            .map(|w| emit_reduction_orbit(&w, o))
            .transpose(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { EXIT_OK });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}
