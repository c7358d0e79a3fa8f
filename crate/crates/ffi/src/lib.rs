//! C ABI over the scheduling simulator.
//!
//! Handles are opaque pointers owned by the caller and released with the
//! matching `*_free`. Fallible calls return a [`V2xStatus`]; the message of
//! the last failure on the calling thread is available through
//! [`v2x_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use v2x_sched::config::ExperimentConfig;
use v2x_sched::ddqn::Agent;
use v2x_sched::env::Env;
use v2x_sched::scenario::generate_scenario;
use v2x_sched::{channel, Error};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum V2xStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Io = 4,
    Schema = 5,
    EpisodeFinished = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// Simulation environment with its resolved configuration.
pub struct V2xEnv {
    cfg: ExperimentConfig,
    env: Option<Env>,
}

/// Trained Q-network scheduler.
pub struct V2xAgent {
    agent: Agent,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(err: &Error) -> V2xStatus {
    match err {
        Error::Config(_) => V2xStatus::Config,
        Error::Io { .. } => V2xStatus::Io,
        Error::Schema(_) => V2xStatus::Schema,
        Error::EpisodeFinished(_) => V2xStatus::EpisodeFinished,
        _ => V2xStatus::InvalidArgument,
    }
}

fn fail(err: Error) -> V2xStatus {
    set_error(err.to_string());
    status_of(&err)
}

fn guarded(f: impl FnOnce() -> V2xStatus) -> V2xStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => {
            if s == V2xStatus::Ok {
                set_error("");
            }
            s
        }
        Err(_) => {
            set_error("internal panic");
            V2xStatus::Panic
        }
    }
}

unsafe fn opt_str<'a>(p: *const c_char) -> Result<Option<&'a str>, V2xStatus> {
    if p.is_null() {
        return Ok(None);
    }
    CStr::from_ptr(p).to_str().map(Some).map_err(|_| {
        set_error("string argument is not valid UTF-8");
        V2xStatus::InvalidArgument
    })
}

unsafe fn parse_config(toml_text: *const c_char) -> Result<ExperimentConfig, V2xStatus> {
    match opt_str(toml_text)? {
        None => Ok(ExperimentConfig::default()),
        Some(t) => ExperimentConfig::from_toml_str(t).map_err(fail),
    }
}

/// Copies the last error message (NUL-terminated, truncated to fit) into
/// `buf` and returns the full message length in bytes.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn v2x_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Creates an environment from a TOML config (null means defaults) and a
/// master seed. Writes the handle to `out`.
///
/// # Safety
/// `config_toml` must be null or a NUL-terminated string; `out` must be valid
/// for writes.
#[no_mangle]
pub unsafe extern "C" fn v2x_env_new(
    config_toml: *const c_char,
    seed: u64,
    out: *mut *mut V2xEnv,
) -> V2xStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null output pointer");
            return V2xStatus::NullPointer;
        }
        let cfg = match parse_config(config_toml) {
            Ok(c) => c.with_seed(seed),
            Err(s) => return s,
        };
        *out = Box::into_raw(Box::new(V2xEnv { cfg, env: None }));
        V2xStatus::Ok
    })
}

/// # Safety
/// `env` must be null or a handle from [`v2x_env_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn v2x_env_free(env: *mut V2xEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// Length of the observation vector.
///
/// # Safety
/// `env` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn v2x_env_state_dim(env: *const V2xEnv) -> usize {
    env.as_ref().map_or(0, |e| 4 * e.cfg.scenario.n_collaborators)
}

/// Number of actions.
///
/// # Safety
/// `env` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn v2x_env_n_actions(env: *const V2xEnv) -> usize {
    env.as_ref().map_or(0, |e| {
        e.cfg.scenario.n_collaborators + usize::from(e.cfg.env.allow_idle)
    })
}

unsafe fn write_state(v: &[f64], out: *mut f64, len: usize) -> V2xStatus {
    if out.is_null() {
        set_error("null state buffer");
        return V2xStatus::NullPointer;
    }
    if len < v.len() {
        set_error(format!("state buffer holds {len}, need {}", v.len()));
        return V2xStatus::BufferTooSmall;
    }
    ptr::copy_nonoverlapping(v.as_ptr(), out, v.len());
    V2xStatus::Ok
}

/// Starts a new episode on the scenario drawn from `scenario_seed` and
/// writes the observation to `state_out`.
///
/// # Safety
/// `env` must be a live handle; `state_out` must hold `state_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn v2x_env_reset(
    env: *mut V2xEnv,
    scenario_seed: u64,
    state_out: *mut f64,
    state_len: usize,
) -> V2xStatus {
    guarded(|| {
        let Some(h) = env.as_mut() else {
            set_error("null environment");
            return V2xStatus::NullPointer;
        };
        let cfg = &h.cfg;
        let res = generate_scenario(&cfg.scenario, scenario_seed).and_then(|world| {
            Env::reset(
                world,
                v2x_sched::rng::derive_seed(cfg.seed, "ffi-env", scenario_seed),
                &cfg.channel,
                &cfg.env,
                &cfg.scenario.confidence,
            )
        });
        match res {
            Ok((e, state)) => {
                let st = write_state(&state.vector, state_out, state_len);
                if st == V2xStatus::Ok {
                    h.env = Some(e);
                }
                st
            }
            Err(e) => fail(e),
        }
    })
}

/// Schedules `action` for one slot. Writes the next observation, the reward
/// and whether the episode ended (1) or not (0).
///
/// # Safety
/// `env` must be a live handle; the output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn v2x_env_step(
    env: *mut V2xEnv,
    action: usize,
    state_out: *mut f64,
    state_len: usize,
    reward_out: *mut f64,
    done_out: *mut i32,
) -> V2xStatus {
    guarded(|| {
        let Some(h) = env.as_mut() else {
            set_error("null environment");
            return V2xStatus::NullPointer;
        };
        if reward_out.is_null() || done_out.is_null() {
            set_error("null output pointer");
            return V2xStatus::NullPointer;
        }
        let Some(e) = h.env.as_mut() else {
            set_error("step before reset");
            return V2xStatus::InvalidArgument;
        };
        if state_out.is_null() {
            set_error("null state buffer");
            return V2xStatus::NullPointer;
        }
        if state_len < e.state_dim() {
            set_error(format!("state buffer holds {state_len}, need {}", e.state_dim()));
            return V2xStatus::BufferTooSmall;
        }
        match e.step(action) {
            Ok(o) => {
                *reward_out = o.reward;
                *done_out = i32::from(o.done);
                write_state(&o.state.vector, state_out, state_len)
            }
            Err(err) => fail(err),
        }
    })
}

/// Loads a checkpoint; its architecture must match the config (null means
/// defaults).
///
/// # Safety
/// `path` must be a NUL-terminated string; `config_toml` null or
/// NUL-terminated; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn v2x_agent_load(
    path: *const c_char,
    config_toml: *const c_char,
    out: *mut *mut V2xAgent,
) -> V2xStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null output pointer");
            return V2xStatus::NullPointer;
        }
        let p = match opt_str(path) {
            Ok(Some(p)) => p,
            Ok(None) => {
                set_error("null path");
                return V2xStatus::NullPointer;
            }
            Err(s) => return s,
        };
        let cfg = match parse_config(config_toml) {
            Ok(c) => c,
            Err(s) => return s,
        };
        let n = cfg.scenario.n_collaborators;
        let dims = cfg.train.layer_dims(4 * n, n + usize::from(cfg.env.allow_idle));
        match Agent::load(Path::new(p), Some(&dims), &cfg.train) {
            Ok(agent) => {
                *out = Box::into_raw(Box::new(V2xAgent { agent }));
                V2xStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `agent` must be null or a handle from [`v2x_agent_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn v2x_agent_free(agent: *mut V2xAgent) {
    if !agent.is_null() {
        drop(Box::from_raw(agent));
    }
}

/// Greedy action for `state`.
///
/// # Safety
/// `agent` must be a live handle; `state` must hold `state_len` doubles;
/// `action_out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn v2x_agent_act(
    agent: *const V2xAgent,
    state: *const f64,
    state_len: usize,
    action_out: *mut usize,
) -> V2xStatus {
    guarded(|| {
        let Some(a) = agent.as_ref() else {
            set_error("null agent");
            return V2xStatus::NullPointer;
        };
        if state.is_null() || action_out.is_null() {
            set_error("null pointer argument");
            return V2xStatus::NullPointer;
        }
        let s = std::slice::from_raw_parts(state, state_len);
        match a.agent.greedy(s) {
            Ok(act) => {
                *action_out = act;
                V2xStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Line-of-sight path loss in dB.
#[no_mangle]
pub extern "C" fn v2x_path_loss_db(distance_m: f64, carrier_freq_hz: f64) -> f64 {
    channel::path_loss_db(distance_m, carrier_freq_hz)
}

/// Whole grids deliverable from `n` per-sub-slot rates.
///
/// # Safety
/// `rates_bps` must hold `n` doubles (or be null when `n` is 0).
#[no_mangle]
pub unsafe extern "C" fn v2x_grid_budget(
    rates_bps: *const f64,
    n: usize,
    subslot_s: f64,
    payload_bits: f64,
) -> usize {
    if n == 0 || rates_bps.is_null() {
        return 0;
    }
    channel::grid_budget(std::slice::from_raw_parts(rates_bps, n), subslot_s, payload_bits)
}
