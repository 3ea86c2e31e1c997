//! Restricting task execution to a set of CPU cores.

use std::env;
use std::path::{Path, PathBuf};

use crate::model::CoreSet;

/// What this host offers for pinning: an affinity launcher and the set of
/// cores the engine itself may run on.
#[derive(Debug, Clone, Default)]
pub struct PinningSupport {
    pub launcher: Option<PathBuf>,
    pub online: Option<CoreSet>,
}

impl PinningSupport {
    pub fn detect() -> Self {
        PinningSupport {
            launcher: find_in_path("taskset"),
            online: allowed_cores(),
        }
    }

    pub fn unsupported() -> Self {
        PinningSupport::default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PinnedCommand {
    pub command: String,
    pub warning: Option<String>,
}

impl PinnedCommand {
    fn unchanged(command: &str, warning: Option<String>) -> Self {
        PinnedCommand {
            command: command.to_string(),
            warning,
        }
    }
}

/// Quotes `text` for a POSIX shell.
pub fn shell_quote(text: &str) -> String {
    format!("'{}'", text.replace('\'', r"'\''"))
}

/// Wraps `command` so that it and all of its descendants run on `cores`.
///
/// Requested cores the host does not have are dropped; when nothing remains,
/// or no launcher is available, the command comes back unchanged with a
/// warning.
pub fn apply_core_pinning(
    command: &str,
    cores: Option<&CoreSet>,
    support: &PinningSupport,
) -> PinnedCommand {
    let Some(cores) = cores.filter(|c| !c.is_empty()) else {
        return PinnedCommand::unchanged(command, None);
    };
    let Some(launcher) = &support.launcher else {
        return PinnedCommand::unchanged(
            command,
            Some(format!("no affinity launcher available; running `{command}` unpinned")),
        );
    };
    let (usable, warning) = match &support.online {
        Some(online) => {
            let usable = cores.intersection(online);
            if usable.is_empty() {
                return PinnedCommand::unchanged(
                    command,
                    Some(format!(
                        "cores {cores} are not available on this host (have {online}); running unpinned"
                    )),
                );
            }
            let warning = (usable.len() < cores.len())
                .then(|| format!("cores {cores} reduced to {usable} available on this host"));
            (usable, warning)
        }
        None => (cores.clone(), None),
    };
    PinnedCommand {
        command: format!(
            "{} -c {} sh -c {}",
            launcher.display(),
            usable,
            shell_quote(command)
        ),
        warning,
    }
}

pub(crate) fn find_in_path(program: &str) -> Option<PathBuf> {
    let path = env::var_os("PATH")?;
    env::split_paths(&path)
        .map(|dir| dir.join(program))
        .find(|candidate| is_executable(candidate))
}

pub(crate) fn is_executable(path: &Path) -> bool {
    use std::os::unix::fs::PermissionsExt;
    path.metadata()
        .map(|m| m.is_file() && m.permissions().mode() & 0o111 != 0)
        .unwrap_or(false)
}

#[cfg(target_os = "linux")]
fn allowed_cores() -> Option<CoreSet> {
    // SAFETY: cpu_set_t is plain data and sched_getaffinity fills at most
    // size_of::<cpu_set_t>() bytes.
    unsafe {
        let mut set: libc::cpu_set_t = std::mem::zeroed();
        if libc::sched_getaffinity(0, std::mem::size_of::<libc::cpu_set_t>(), &mut set) != 0 {
            return None;
        }
        let cores: CoreSet = (0..libc::CPU_SETSIZE as usize)
            .filter(|&c| libc::CPU_ISSET(c, &set))
            .collect();
        (!cores.is_empty()).then_some(cores)
    }
}

#[cfg(not(target_os = "linux"))]
fn allowed_cores() -> Option<CoreSet> {
    None
}
