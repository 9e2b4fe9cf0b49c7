#include <linux/atomic.h>

int idle_check(struct worker *w)
{
	if (atomic_dec_and_test(&w->pending))
		return 1;
	return 0;
}
