use skillmix::simenv::*;

fn main() {
    let p = ObjectProfile::easy();
    for noise in [0.0, 0.05, 0.1] {
        let mut succ = 0;
        let mut staged_ret = 0.0;
        let mut dense_ret = 0.0;
        let staged = task_spec(Task::StackRedOnBlue, RewardMode::StagedSparse);
        let dense = task_spec(Task::StackRedOnBlue, RewardMode::Dense);
        let mut first_stack_steps = Vec::new();
        for seed in 0..100u64 {
            let mut s = reset(&p, seed);
            let mut expert = ScriptedExpert::new(RED, BLUE, noise, seed ^ 77);
            let mut stacked_at = None;
            for t in 0..EPISODE_LEN {
                let (a, _) = expert.act(&s, &p);
                s = step(&s, &a, &p);
                let r = staged_reward_at(&staged, &s, &p);
                staged_ret += r;
                dense_ret += staged_reward_at(&dense, &s, &p);
                if r >= 0.8 && stacked_at.is_none() {
                    stacked_at = Some(t);
                }
            }
            if let Some(t) = stacked_at {
                succ += 1;
                first_stack_steps.push(t);
            }
        }
        let mean_first = first_stack_steps.iter().sum::<usize>() as f64 / first_stack_steps.len().max(1) as f64;
        println!(
            "noise {noise}: success {succ}%  mean staged return {:.1}  mean dense return {:.1}  mean first-stack step {:.0}",
            staged_ret / 100.0,
            dense_ret / 100.0,
            mean_first
        );
    }
}
