use proptest::prelude::*;

use finj::model::{CoreSet, EventType, Message, MessageKind, Payload, SessionEvent, Task, TaskEcho};


pub fn arb_args() -> impl Strategy<Value = String> {
    "[a-z./_][a-z0-9 ./_=-]{0,30}[a-z0-9]".prop_filter("reserved", |s| s != "None")
}

pub fn arb_cores() -> impl Strategy<Value = Option<CoreSet>> {
    proptest::option::of(proptest::collection::btree_set(0usize..64, 1..10).prop_map(CoreSet::new))
}

pub fn arb_task() -> impl Strategy<Value = Task> {
    (arb_args(), 0u64..100_000, 0u64..10_000, any::<bool>(), 1u64..1_000_000, arb_cores()).prop_map(
        |(args, timestamp, duration, is_fault, seq_num, cores)| Task {
            args,
            timestamp,
            duration,
            is_fault,
            seq_num,
            cores,
        },
    )
}

pub fn arb_task_list(max: usize) -> impl Strategy<Value = Vec<Task>> {
    proptest::collection::vec(arb_task(), 0..max).prop_map(|mut tasks| {
        for (i, t) in tasks.iter_mut().enumerate() {
            t.seq_num = i as u64 + 1;
        }
        tasks
    })
}

pub fn arb_echo() -> impl Strategy<Value = TaskEcho> {
    arb_task().prop_map(|t| t.echo())
}

pub fn arb_event() -> impl Strategy<Value = SessionEvent> {
    (
        0u64..4_000_000_000,
        proptest::sample::select(EventType::ALL.to_vec()),
        proptest::option::of(arb_echo()),
        proptest::option::of("[A-Za-z0-9 :.,_-]{1,40}".prop_filter("reserved", |s| s != "None")),
    )
        .prop_map(|(timestamp, kind, task, error)| SessionEvent {
            timestamp,
            kind,
            task,
            error,
        })
}

pub fn arb_message() -> impl Strategy<Value = Message> {
    (
        proptest::sample::select(MessageKind::ALL.to_vec()),
        arb_task(),
        any::<u64>(),
        proptest::option::of(".{0,20}"),
        proptest::option::of(".{0,20}"),
        "[a-z0-9.]{1,12}:[0-9]{1,5}",
    )
        .prop_map(|(kind, task, abs, error, out, sender)| {
            let mut payload = if kind.carries_task() || out.is_some() {
                Payload::from_task(&task)
            } else {
                Payload::default()
            };
            if kind == MessageKind::CommandTerminateTask {
                payload.seq_num = Some(task.seq_num);
            }
            if kind == MessageKind::CommandSessionStart {
                payload.timestamp = Some(task.timestamp);
            }
            if kind.is_status() {
                payload.abs_time = Some(abs);
            }
            if matches!(kind, MessageKind::StatusError | MessageKind::StatusConnection) {
                payload.error = Some(error.clone().unwrap_or_default());
            } else {
                payload.error = error;
            }
            payload.stdout = out;
            Message::new(kind, sender, payload)
        })
}
