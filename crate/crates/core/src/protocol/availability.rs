use super::types::DebugMode;

/// Whether a session in mode `requested` may start next to sessions already
/// active on the same workflow in `active` modes.
///
/// A synchronous session excludes every other session; snapshot and
/// profiler sessions coexist with each other but exclude synchronous ones.
/// Mock sessions are local and always allowed.
pub fn compute_availability<I>(active: I, requested: DebugMode) -> bool
where
    I: IntoIterator<Item = DebugMode>,
{
    if requested == DebugMode::Mock {
        return true;
    }
    let mut any = false;
    for mode in active {
        match mode {
            DebugMode::Synchronous => return false,
            DebugMode::Snapshot | DebugMode::Profiler => any = true,
            DebugMode::Mock => {}
        }
    }
    !(any && requested == DebugMode::Synchronous)
}

/// A set of concurrently active modes is legal when every session could have
/// been admitted next to the others.
pub fn is_legal_session_set(active: &[DebugMode]) -> bool {
    (0..active.len()).all(|i| {
        let others = active.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, m)| *m);
        compute_availability(others, active[i])
    })
}
